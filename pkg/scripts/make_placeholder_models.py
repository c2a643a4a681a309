"""Regenerate the placeholder energy-model files shipped in ``src/stopgo/data``.

The coefficients come from fitting the capped polynomial to a road-load surrogate. They are
NOT validated against any powertrain simulator and exist only to keep the pipeline runnable.
"""

import json
from pathlib import Path

from stopgo.energy import CAV_CLASS, HV_SHARES, PLACEHOLDER_VEHICLES, fit_surrogate

DATA = Path(__file__).resolve().parents[1] / "src" / "stopgo" / "data"


def main():
    (DATA / "models").mkdir(parents=True, exist_ok=True)
    entries = []
    for veh in PLACEHOLDER_VEHICLES:
        res = fit_surrogate(veh)
        res.model.save(DATA / "models" / f"{veh.class_name}.json")
        share = None if veh.class_name == CAV_CLASS else HV_SHARES[veh.class_name]
        entries.append({"class_name": veh.class_name, "model_file": f"models/{veh.class_name}.json",
                        "share": share})
        print(f"{veh.class_name:16s} residual={res.residual_norm:.4g} n={res.n_used}")
    (DATA / "portfolio.json").write_text(json.dumps(entries, indent=2) + "\n")


if __name__ == "__main__":
    main()
