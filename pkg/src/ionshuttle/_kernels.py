"""Numba kernels for the transport integrator.

The hot loop evaluates closed-form patch fields (same formulas as trapmodel,
scalar form) and steps velocity-Verlet through the time-dependent control
potential given by the filter-response coefficients.  Kept separate from the
vectorized numpy implementations; equivalence is covered by tests.
"""

from __future__ import annotations

import numpy as np
from numba import njit

TWO_PI = 2.0 * np.pi


@njit(cache=True)
def _patch_gradient(xlo, xhi, ylo, yhi, x, y, z):
    gx = 0.0
    gy = 0.0
    gz = 0.0
    for i in range(2):
        u = x - (xlo if i == 0 else xhi)
        for j in range(2):
            v = y - (ylo if j == 0 else yhi)
            s = 1.0 if i == j else -1.0
            r2 = u * u + v * v + z * z
            r = np.sqrt(r2)
            uz = u * u + z * z
            vz = v * v + z * z
            gx += s * z * v / (r * uz)
            gy += s * z * u / (r * vz)
            gz -= s * u * v * (r2 + z * z) / (r * uz * vz)
    return gx / TWO_PI, gy / TWO_PI, gz / TWO_PI


@njit(cache=True)
def _patch_grad_hess(xlo, xhi, ylo, yhi, x, y, z):
    gx = gy = gz = 0.0
    hxx = hyy = hxy = hxz = hyz = 0.0
    for i in range(2):
        u = x - (xlo if i == 0 else xhi)
        for j in range(2):
            v = y - (ylo if j == 0 else yhi)
            s = 1.0 if i == j else -1.0
            r2 = u * u + v * v + z * z
            r = np.sqrt(r2)
            r3 = r * r2
            uz = u * u + z * z
            vz = v * v + z * z
            lat2 = u * u + v * v
            gx += s * z * v / (r * uz)
            gy += s * z * u / (r * vz)
            gz -= s * u * v * (r2 + z * z) / (r * uz * vz)
            hxx -= s * z * v * u * (uz + 2.0 * r2) / (r3 * uz * uz)
            hyy -= s * z * u * v * (vz + 2.0 * r2) / (r3 * vz * vz)
            hxy += s * z / r3
            hxz += s * v * (lat2 * uz - 2.0 * z * z * r2) / (r3 * uz * uz)
            hyz += s * u * (lat2 * vz - 2.0 * z * z * r2) / (r3 * vz * vz)
    return (gx / TWO_PI, gy / TWO_PI, gz / TWO_PI,
            hxx / TWO_PI, hyy / TWO_PI, hxy / TWO_PI,
            hxz / TWO_PI, hyz / TWO_PI)


@njit(cache=True)
def _channel_voltages(t, alpha, beta, gamma, tau, sp, n_seg, out):
    k = int(t / sp)
    if k > n_seg - 1:
        k = n_seg - 1
    s = t - k * sp
    decay = np.exp(-s / tau)
    n_chan = alpha.shape[1]
    order = gamma.shape[1]
    for c in range(n_chan):
        poly = 0.0
        for i in range(order - 1, -1, -1):
            poly = poly * s + gamma[k, i, c]
        out[c] = alpha[k, c] + beta[k, c] * s + decay * poly


@njit(cache=True)
def _force(x, y, z, volts,
           rf_xlo, rf_xhi, rf_ylo, rf_yhi,
           c_xlo, c_xhi, c_ylo, c_yhi, c_chan,
           sheet_slope_per_volt, v_sheet,
           ps_scale, q, mode, rf_amp, phase):
    """Force (N) on the ion at (x, y, z); volts are the 31 channel values."""
    # rf basis field
    gx = gy = gz = 0.0
    hxx = hyy = hxy = hxz = hyz = 0.0
    for p in range(rf_xlo.shape[0]):
        r = _patch_grad_hess(rf_xlo[p], rf_xhi[p], rf_ylo[p], rf_yhi[p], x, y, z)
        gx += r[0]
        gy += r[1]
        gz += r[2]
        hxx += r[3]
        hyy += r[4]
        hxy += r[5]
        hxz += r[6]
        hyz += r[7]
    hzz = -hxx - hyy
    if mode == 0:
        # pseudopotential force: -2C * H g
        fx = -2.0 * ps_scale * (hxx * gx + hxy * gy + hxz * gz)
        fy = -2.0 * ps_scale * (hxy * gx + hyy * gy + hyz * gz)
        fz = -2.0 * ps_scale * (hxz * gx + hyz * gy + hzz * gz)
    else:
        # instantaneous rf force: -q u_rf cos(Omega t) grad(phi_rf)
        amp = -q * rf_amp * np.cos(phase)
        fx = amp * gx
        fy = amp * gy
        fz = amp * gz
    # control electrodes
    cgx = cgy = cgz = 0.0
    for p in range(c_xlo.shape[0]):
        w = volts[c_chan[p]]
        if w == 0.0:
            continue
        g0, g1, g2 = _patch_gradient(c_xlo[p], c_xhi[p], c_ylo[p], c_yhi[p], x, y, z)
        cgx += w * g0
        cgy += w * g1
        cgz += w * g2
    cgz += sheet_slope_per_volt * v_sheet
    fx -= q * cgx
    fy -= q * cgy
    fz -= q * cgz
    return fx, fy, fz


@njit(cache=True)
def run_transport(x0, v0, dt, n_steps,
                  rf_xlo, rf_xhi, rf_ylo, rf_yhi,
                  c_xlo, c_xhi, c_ylo, c_yhi, c_chan,
                  alpha, beta, gamma, tau, sp, n_seg,
                  sheet_slope_per_volt,
                  ps_scale, q, mass, mode, rf_amp, omega_rf,
                  noise_dv, max_excursion, z_floor, decim):
    """Velocity-Verlet through the filtered waveform.

    Returns (trajectory rows [t x y z vx vy vz], n_rows, final_state[6],
    lost_flag, max_excursion_seen).
    """
    x, y, z = x0[0], x0[1], x0[2]
    vx, vy, vz = v0[0], v0[1], v0[2]
    volts = np.empty(alpha.shape[1])
    n_rows_cap = n_steps // decim + 2
    traj = np.empty((n_rows_cap, 7))
    n_rows = 0
    lost = False
    max_exc = 0.0
    inv_m = 1.0 / mass

    _channel_voltages(0.0, alpha, beta, gamma, tau, sp, n_seg, volts)
    fx, fy, fz = _force(x, y, z, volts, rf_xlo, rf_xhi, rf_ylo, rf_yhi,
                        c_xlo, c_xhi, c_ylo, c_yhi, c_chan,
                        sheet_slope_per_volt, volts[volts.shape[0] - 1],
                        ps_scale, q, mode, rf_amp, 0.0)
    ax, ay, az = fx * inv_m, fy * inv_m, fz * inv_m

    have_noise = noise_dv.shape[0] == n_steps
    t_now = 0.0

    for step in range(n_steps):
        t_new = (step + 1) * dt
        if step % decim == 0:
            traj[n_rows, 0] = step * dt
            traj[n_rows, 1] = x
            traj[n_rows, 2] = y
            traj[n_rows, 3] = z
            traj[n_rows, 4] = vx
            traj[n_rows, 5] = vy
            traj[n_rows, 6] = vz
            n_rows += 1
        x += vx * dt + 0.5 * ax * dt * dt
        y += vy * dt + 0.5 * ay * dt * dt
        z += vz * dt + 0.5 * az * dt * dt
        t_now = t_new
        exc = np.sqrt((x - x0[0]) ** 2 + (y - x0[1]) ** 2 + (z - x0[2]) ** 2)
        if exc > max_exc:
            max_exc = exc
        if z <= z_floor or exc > max_excursion:
            lost = True
            break
        _channel_voltages(t_new, alpha, beta, gamma, tau, sp, n_seg, volts)
        fx, fy, fz = _force(x, y, z, volts, rf_xlo, rf_xhi, rf_ylo, rf_yhi,
                            c_xlo, c_xhi, c_ylo, c_yhi, c_chan,
                            sheet_slope_per_volt, volts[volts.shape[0] - 1],
                            ps_scale, q, mode, rf_amp, omega_rf * t_new)
        ax_new, ay_new, az_new = fx * inv_m, fy * inv_m, fz * inv_m
        vx += 0.5 * (ax + ax_new) * dt
        vy += 0.5 * (ay + ay_new) * dt
        vz += 0.5 * (az + az_new) * dt
        if have_noise:
            vx += noise_dv[step, 0]
            vy += noise_dv[step, 1]
            vz += noise_dv[step, 2]
        ax, ay, az = ax_new, ay_new, az_new

    final = np.empty(6)
    final[0] = x
    final[1] = y
    final[2] = z
    final[3] = vx
    final[4] = vy
    final[5] = vz
    traj[n_rows, 0] = t_now
    traj[n_rows, 1] = x
    traj[n_rows, 2] = y
    traj[n_rows, 3] = z
    traj[n_rows, 4] = vx
    traj[n_rows, 5] = vy
    traj[n_rows, 6] = vz
    n_rows += 1
    return traj, n_rows, final, lost, max_exc
