"""Pure-numpy reference implementation of the stepping kernels.

Both backends share one contract.  The state u (nx,) is advanced through
ns = alap.shape[0] explicit steps; the four weight arrays (ns, nx) already
contain the dt / dW contractions:

    u_new[i] = u[i] + alap[j,i] * (u[i+1] - 2 u[i] + u[i-1]) * inv_h2
                    + agrad[j,i] * (u[i+1] - u[i-1]) * inv_2h
                    + aself[j,i] * u[i] + asrc[j,i]

Row j of out receives the state after step j.  The return value is the first
step index whose row contains a non-finite value or exceeds blowup in
absolute value, or -1; on success u is overwritten with the final state.
"""

import numpy as np


def step_periodic(u, alap, agrad, aself, asrc, inv_h2, inv_2h, blowup, out):
    ns = alap.shape[0]
    cur = u.copy()
    for j in range(ns):
        up = np.roll(cur, -1)
        um = np.roll(cur, 1)
        new = (
            cur
            + alap[j] * ((up - 2.0 * cur + um) * inv_h2)
            + agrad[j] * ((up - um) * inv_2h)
            + aself[j] * cur
            + asrc[j]
        )
        out[j] = new
        if not (np.max(np.abs(new)) <= blowup):
            return j
        cur = new
    u[:] = cur
    return -1


def step_dirichlet(u, alap, agrad, aself, asrc, left, right, inv_h2, inv_2h, blowup, out):
    """Interior nodes 1..nx-2 stepped as above; the end nodes are then set to
    left[j], right[j] (boundary data at the new time)."""
    ns = alap.shape[0]
    cur = u.copy()
    for j in range(ns):
        new = cur.copy()
        lap = cur[2:] - 2.0 * cur[1:-1] + cur[:-2]
        grad = cur[2:] - cur[:-2]
        new[1:-1] = (
            cur[1:-1]
            + alap[j, 1:-1] * (lap * inv_h2)
            + agrad[j, 1:-1] * (grad * inv_2h)
            + aself[j, 1:-1] * cur[1:-1]
            + asrc[j, 1:-1]
        )
        new[0] = left[j]
        new[-1] = right[j]
        out[j] = new
        if not (np.max(np.abs(new)) <= blowup):
            return j
        cur = new
    u[:] = cur
    return -1
