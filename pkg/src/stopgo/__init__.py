"""Single-lane traffic microsimulation: phantom jams, flow-smoothing controllers and fuel KPIs."""

__version__ = "0.1.0"
