"""Compiled inner loops.

Everything here works on plain arrays; the public modules build the
coefficients and own the random streams. The recurrences mirror
``Propagator.step``, ``Bandpass.step`` and ``PhaseShifter.step`` exactly.
"""

import math

from numba import njit

# layout of the per-loop float state vector
_BP_S1, _BP_S2, _AP_S, _FORCE = 0, 1, 2, 3
N_LOOP_STATE = 4


@njit(cache=True)
def propagate(phi, bd, chol, x, v, accel, normals, abort, out_x, out_v):
    """Open-loop recurrence over ``normals.shape[0]`` steps.

    ``accel`` holds the per-step external acceleration along each axis.
    Returns the index of the first step that breached ``abort`` or -1.
    """
    n = normals.shape[0]
    for i in range(n):
        for j in range(2):
            xn = (phi[j, 0, 0] * x[j] + phi[j, 0, 1] * v[j] + bd[j, 0] * accel[i, j]
                  + chol[j, 0, 0] * normals[i, 2 * j])
            vn = (phi[j, 1, 0] * x[j] + phi[j, 1, 1] * v[j] + bd[j, 1] * accel[i, j]
                  + chol[j, 1, 0] * normals[i, 2 * j] + chol[j, 1, 1] * normals[i, 2 * j + 1])
            x[j] = xn
            v[j] = vn
            if not abs(xn) < abort:
                return i
        out_x[i, 0] = x[0]
        out_x[i, 1] = x[1]
        out_v[i, 0] = v[0]
        out_v[i, 1] = v[1]
    return -1


@njit(cache=True)
def _poisson_inv(mu, u):
    # inversion; mu is at most a few tenths per step
    k = 0
    p = math.exp(-mu)
    cdf = p
    while u > cdf and k < 1000:
        k += 1
        p *= mu / k
        cdf += p
    return k


@njit(cache=True)
def closed_loop(
    step0, x, v, phi, bd, chol, inv_mass, axis_vec, abort, dt,
    normals, uniforms,
    proj, knife_offset, erf_scale, mu_total,
    drive_force, drive_omega, drive_phase,
    steps_per_det, steps_per_bin, det_norm, det_offset,
    bp, ap, fb_gain, fb_clip, fb_axis, loop_state, delay_buf, delay_pos,
    det_acc, bin_acc,
    out_counts, out_x, out_v, events_in, events_out,
):
    """Advance the coupled ion / detector / feedback system by one chunk.

    Per-step work: exact linear propagation with the held force, photon
    emission into the transmitted (in-loop, channel 0) and reflected
    (out-loop, channel 1) detectors, and every ``steps_per_det`` steps one
    sample through each feedback chain.

    Event step indices are written to ``events_in`` / ``events_out``.
    Returns ``(n_in, n_out, abort_step)``; ``abort_step`` is -1 when all is well.
    Chunk length must be a multiple of ``steps_per_bin`` and of
    ``steps_per_det`` so the accumulators line up across calls.
    """
    n = normals.shape[0]
    n_loops = bp.shape[0]
    n_in = 0
    n_out = 0
    n_bin = 0
    for i in range(n):
        step = step0 + i
        t = step * dt
        # held feedback force in the lab frame
        fx = 0.0
        fy = 0.0
        for l in range(n_loops):
            fx += loop_state[l, _FORCE] * fb_axis[l, 0]
            fy += loop_state[l, _FORCE] * fb_axis[l, 1]
        sd = math.sin(drive_omega * (t + 0.5 * dt) + drive_phase)
        fx += drive_force[0] * sd
        fy += drive_force[1] * sd

        d = knife_offset
        for j in range(2):
            a = (fx * axis_vec[j, 0] + fy * axis_vec[j, 1]) * inv_mass
            xn = (phi[j, 0, 0] * x[j] + phi[j, 0, 1] * v[j] + bd[j, 0] * a
                  + chol[j, 0, 0] * normals[i, 2 * j])
            vn = (phi[j, 1, 0] * x[j] + phi[j, 1, 1] * v[j] + bd[j, 1] * a
                  + chol[j, 1, 0] * normals[i, 2 * j] + chol[j, 1, 1] * normals[i, 2 * j + 1])
            x[j] = xn
            v[j] = vn
            if not abs(xn) < abort:
                return n_in, n_out, step
            d += proj[j] * xn

        trans = 0.5 * (1.0 + math.erf(erf_scale * d))
        c_in = 0
        c_out = 0
        if mu_total > 0.0:
            c_in = _poisson_inv(mu_total * trans, uniforms[i, 0])
            c_out = _poisson_inv(mu_total * (1.0 - trans), uniforms[i, 1])
        for k in range(c_in):
            events_in[n_in] = step
            n_in += 1
        for k in range(c_out):
            events_out[n_out] = step
            n_out += 1
        det_acc[0] += c_in
        bin_acc[0] += c_in
        bin_acc[1] += c_out

        if (step + 1) % steps_per_bin == 0:
            out_counts[n_bin, 0] = bin_acc[0]
            out_counts[n_bin, 1] = bin_acc[1]
            out_x[n_bin, 0] = x[0]
            out_x[n_bin, 1] = x[1]
            out_v[n_bin, 0] = v[0]
            out_v[n_bin, 1] = v[1]
            bin_acc[0] = 0
            bin_acc[1] = 0
            n_bin += 1

        if (step + 1) % steps_per_det == 0:
            u = det_acc[0] * det_norm - det_offset
            det_acc[0] = 0
            for l in range(n_loops):
                # bandpass, transposed direct form II
                y = bp[l, 0] * u + loop_state[l, _BP_S1]
                loop_state[l, _BP_S1] = bp[l, 1] * u - bp[l, 3] * y + loop_state[l, _BP_S2]
                loop_state[l, _BP_S2] = bp[l, 2] * u - bp[l, 4] * y
                # first-order all-pass, then sign
                z = ap[l, 0] * y + loop_state[l, _AP_S]
                loop_state[l, _AP_S] = y - ap[l, 0] * z
                z *= ap[l, 1]
                if z > fb_clip[l]:
                    z = fb_clip[l]
                elif z < -fb_clip[l]:
                    z = -fb_clip[l]
                nd = delay_buf.shape[1]
                p = delay_pos[l]
                delay_buf[l, p] = fb_gain[l] * z
                p = (p + 1) % nd
                loop_state[l, _FORCE] = delay_buf[l, p]
                delay_pos[l] = p
    return n_in, n_out, -1
