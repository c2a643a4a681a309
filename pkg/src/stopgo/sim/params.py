"""Layout of the flat parameter vector shared by both kernel backends."""

import numpy as np

KIND_HUMAN = 0
KIND_IDMR = 1
KIND_FS = 2

H_A, H_B, H_V0, H_DELTA, H_T, H_S0 = range(6)
GAP_FORM = 6
DT = 7
A_MIN = 8
A_MAX = 9
FAILSAFE = 10
SAFE_DECEL = 11
MIN_GAP = 12
C_VDES = 13
C_GAMMA = 14
C_A, C_B, C_V0, C_DELTA, C_T, C_S0 = range(15, 21)
FS_X1, FS_X2, FS_X3 = range(21, 24)
FS_D1, FS_D2, FS_D3 = range(24, 27)
N_PARAMS = 27


def pack(idm, gap_form, dt, bounds, fail_safes, safe_decel, min_gap, controller=None):
    """Build the parameter vector from scenario pieces."""
    from ..cfm import GAP_FORMS
    from ..controllers import FollowerStopper, IdmRelaxation

    prm = np.zeros(N_PARAMS)
    prm[H_A:H_S0 + 1] = idm.as_tuple()
    prm[GAP_FORM] = GAP_FORMS.index(gap_form)
    prm[DT] = dt
    prm[A_MIN], prm[A_MAX] = bounds
    prm[FAILSAFE] = 1.0 if fail_safes else 0.0
    prm[SAFE_DECEL] = safe_decel
    prm[MIN_GAP] = min_gap
    prm[C_A:C_S0 + 1] = idm.as_tuple()
    if isinstance(controller, IdmRelaxation):
        prm[C_VDES] = controller.v_desired
        prm[C_GAMMA] = controller.gamma
        prm[C_A:C_S0 + 1] = controller.idm.as_tuple()
    elif isinstance(controller, FollowerStopper):
        prm[C_VDES] = controller.v_desired
        prm[FS_X1:FS_X3 + 1] = controller.dx0
        prm[FS_D1:FS_D3 + 1] = [abs(d) for d in controller.decel]
    return prm
