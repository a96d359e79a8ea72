"""Hot numeric kernels, written in numba-compatible numpy.

Every function here is wrapped by `kernel` (see _backend): jitted under numba,
plain numpy otherwise. Kernels take only scalars and float64 arrays so both
paths stay identical; friendly wrappers live in the public modules.

Vehicle parameters are packed into a flat float64 vector (see PV_* indices)
so the integrator loop stays allocation-free.
"""

import math

import numpy as np

from ._backend import kernel

GRAVITY = 9.81

# indices into the packed vehicle-parameter vector
PV_M = 0       # mass [kg]
PV_IZ = 1      # yaw inertia [kg m^2]
PV_LF = 2      # c.g. to front axle [m]
PV_LR = 3      # c.g. to rear axle [m]
PV_WB = 4      # track width [m]
PV_RW = 5      # wheel radius [m]
PV_MU = 6      # road adhesion coefficient
PV_TB = 7      # tire stiffness factor
PV_TC = 8      # tire shape factor
PV_TD = 9      # tire peak scale
PV_TE = 10     # tire curvature factor
PV_DRAG = 11   # aero drag lump [N s^2/m^2]
PV_ROLL = 12   # rolling resistance coefficient
PV_SIZE = 13


@kernel
def tire_lateral(alpha, fz, b_stiff, c_shape, d_scale, e_curv, mu):
    """Lateral tire force: peak mu*d_scale*fz, sine-of-arctangent shape, odd in alpha."""
    d_peak = mu * d_scale * fz
    ba = b_stiff * alpha
    return d_peak * math.sin(c_shape * math.atan(ba - e_curv * (ba - math.atan(ba))))


@kernel
def planar_rhs(vx, vy, wr, torque, steer, pv):
    """Time derivatives (dVx, dVy, dwr) of the planar four-wheel model.

    Wheel order: 1 front-left, 2 front-right, 3 rear-left, 4 rear-right.
    Driving torque splits evenly across the four wheels; rolling and aero
    resistance are lumped and split evenly too, so per-side longitudinal
    force differences vanish identically.
    """
    m = pv[PV_M]
    iz = pv[PV_IZ]
    lf = pv[PV_LF]
    lr = pv[PV_LR]
    wb = pv[PV_WB]

    # static normal loads per wheel
    fz_front = m * GRAVITY * lr / (2.0 * (lf + lr))
    fz_rear = m * GRAVITY * lf / (2.0 * (lf + lr))

    # per-wheel longitudinal force (identical on all four wheels)
    resist = pv[PV_ROLL] * m * GRAVITY + pv[PV_DRAG] * vx * vx
    fx = 0.25 * (torque / pv[PV_RW] - resist)

    half_track = 0.5 * wb * wr
    vy_front = vy + lf * wr
    vy_rear = vy - lr * wr
    a1 = steer - math.atan2(vy_front, vx - half_track)
    a2 = steer - math.atan2(vy_front, vx + half_track)
    a3 = -math.atan2(vy_rear, vx - half_track)
    a4 = -math.atan2(vy_rear, vx + half_track)

    mu = pv[PV_MU]
    tb = pv[PV_TB]
    tc = pv[PV_TC]
    td = pv[PV_TD]
    te = pv[PV_TE]
    fy1 = tire_lateral(a1, fz_front, tb, tc, td, te, mu)
    fy2 = tire_lateral(a2, fz_front, tb, tc, td, te, mu)
    fy3 = tire_lateral(a3, fz_rear, tb, tc, td, te, mu)
    fy4 = tire_lateral(a4, fz_rear, tb, tc, td, te, mu)

    cd = math.cos(steer)
    sd = math.sin(steer)
    fx_front = fx + fx
    fy_front = fy1 + fy2
    fy_rear = fy3 + fy4

    dvx = (fx_front * cd - fy_front * sd + (fx + fx)) / m + vy * wr
    dvy = (fx_front * sd + fy_front * cd + fy_rear) / m - vx * wr
    dwr = (0.5 * wb * ((fy1 - fy2) * sd)
           + lf * (fx_front * sd + fy_front * cd)
           - lr * fy_rear) / iz
    return dvx, dvy, dwr


@kernel
def rk4_step(vx, vy, wr, torque, steer, dt, substeps, pv):
    """Classical RK4 advance of the planar model over dt, zero-order-hold input."""
    h = dt / substeps
    for _ in range(substeps):
        k1x, k1y, k1r = planar_rhs(vx, vy, wr, torque, steer, pv)
        k2x, k2y, k2r = planar_rhs(vx + 0.5 * h * k1x, vy + 0.5 * h * k1y,
                                   wr + 0.5 * h * k1r, torque, steer, pv)
        k3x, k3y, k3r = planar_rhs(vx + 0.5 * h * k2x, vy + 0.5 * h * k2y,
                                   wr + 0.5 * h * k2r, torque, steer, pv)
        k4x, k4y, k4r = planar_rhs(vx + h * k3x, vy + h * k3y,
                                   wr + h * k3r, torque, steer, pv)
        vx = vx + h * (k1x + 2.0 * k2x + 2.0 * k3x + k4x) / 6.0
        vy = vy + h * (k1y + 2.0 * k2y + 2.0 * k3y + k4y) / 6.0
        wr = wr + h * (k1r + 2.0 * k2r + 2.0 * k3r + k4r) / 6.0
    return vx, vy, wr


@kernel
def simulate_path(x0, torques, steers, dt, substeps, pv):
    """Integrate a full input schedule; returns (states, accels, fail_index).

    states[k] holds the state at t=k*dt, accels[k] the body-frame sensor
    accelerations there under input k (ax = dVx - Vy*wr, ay = dVy + Vx*wr).
    fail_index >= 0 flags the first step where Vx fell to the validity floor.
    """
    n = torques.shape[0]
    states = np.zeros((n, 3))
    accels = np.zeros((n, 2))
    vx = x0[0]
    vy = x0[1]
    wr = x0[2]
    fail = -1
    for k in range(n):
        if vx <= 0.1:
            fail = k
            break
        states[k, 0] = vx
        states[k, 1] = vy
        states[k, 2] = wr
        dvx, dvy, dwr = planar_rhs(vx, vy, wr, torques[k], steers[k], pv)
        accels[k, 0] = dvx - vy * wr
        accels[k, 1] = dvy + vx * wr
        if k < n - 1:
            vx, vy, wr = rk4_step(vx, vy, wr, torques[k], steers[k], dt, substeps, pv)
    return states, accels, fail


@kernel
def one_step_batch(states, torques, steers, dt, substeps, pv):
    """One RK4 step from every measured state; rows where Vx is at the floor stay zero."""
    n = states.shape[0]
    preds = np.zeros((n, 3))
    for k in range(n):
        vx = states[k, 0]
        if vx <= 0.1:
            continue
        nx, ny, nr = rk4_step(vx, states[k, 1], states[k, 2],
                              torques[k], steers[k], dt, substeps, pv)
        preds[k, 0] = nx
        preds[k, 1] = ny
        preds[k, 2] = nr
    return preds


# ---------------------------------------------------------------------------
# dense-network kernels on a flat parameter vector
#
# A network is described by parallel arrays (one entry per layer):
#   shapes[j] = (out_dim, in_dim)
#   w_off[j]  = offset of the row-major (out_dim, in_dim) weight block
#   b_off[j]  = offset of the bias vector, or -1 when the layer has none
#   acts[j]   = 0 linear, 1 tanh, 2 relu
# The forward cache stores the input batch followed by every layer's
# post-activation batch, which is all the backward pass needs.

ACT_LINEAR = 0
ACT_TANH = 1
ACT_RELU = 2


@kernel
def dense_forward(theta, shapes, w_off, b_off, acts, x, cache):
    """Forward pass; fills `cache` (batch, in0 + sum(out_j)) and returns the output batch."""
    nlayers = shapes.shape[0]
    in0 = shapes[0, 1]
    cache[:, 0:in0] = x
    prev_start = 0
    prev_dim = in0
    pos = in0
    for j in range(nlayers):
        out_d = shapes[j, 0]
        in_d = shapes[j, 1]
        w = theta[w_off[j]:w_off[j] + out_d * in_d].reshape(out_d, in_d)
        a_prev = np.ascontiguousarray(cache[:, prev_start:prev_start + in_d])
        z = np.dot(a_prev, w.T)
        if b_off[j] >= 0:
            z = z + theta[b_off[j]:b_off[j] + out_d]
        if acts[j] == ACT_TANH:
            z = np.tanh(z)
        elif acts[j] == ACT_RELU:
            z = np.maximum(z, 0.0)
        cache[:, pos:pos + out_d] = z
        prev_start = pos
        prev_dim = out_d
        pos += out_d
    return np.ascontiguousarray(cache[:, pos - prev_dim:pos])


@kernel
def dense_backward(theta, shapes, w_off, b_off, acts, cache, gy, grad):
    """Reverse pass: accumulates parameter gradients into `grad`, returns input gradient."""
    nlayers = shapes.shape[0]
    in0 = shapes[0, 1]
    # activation-block start offsets inside the cache
    starts = np.zeros(nlayers + 1, dtype=np.int64)
    starts[0] = 0
    pos = in0
    for j in range(nlayers):
        starts[j + 1] = pos
        pos += shapes[j, 0]

    g = gy.copy()
    for j in range(nlayers - 1, -1, -1):
        out_d = shapes[j, 0]
        in_d = shapes[j, 1]
        a_j = cache[:, starts[j + 1]:starts[j + 1] + out_d]
        if acts[j] == ACT_TANH:
            g = g * (1.0 - a_j * a_j)
        elif acts[j] == ACT_RELU:
            g = np.where(a_j > 0.0, g, 0.0)
        a_prev = np.ascontiguousarray(cache[:, starts[j]:starts[j] + in_d])
        gw = np.dot(np.ascontiguousarray(g.T), a_prev)
        grad[w_off[j]:w_off[j] + out_d * in_d] += gw.ravel()
        if b_off[j] >= 0:
            grad[b_off[j]:b_off[j] + out_d] += np.sum(g, axis=0)
        w = theta[w_off[j]:w_off[j] + out_d * in_d].reshape(out_d, in_d)
        g = np.dot(np.ascontiguousarray(g), w)
    return g
