"""Compiled inner loops for the projection solvers.

Everything here works on raw float64 arrays; the public modules own the
domain types and validation.  Gradient kernels accumulate into a caller
provided buffer.  Hinge terms use the squared-distance form
``h = max(0, R^2 - d^2)``; an inactive constraint contributes nothing.
"""

import numpy as np
from numba import njit

# Coincident centers leave the separation direction undefined; the difference
# vector is replaced by this fixed offset before gradients are taken.
DEGENERATE_EPS = 1e-9


@njit(cache=True)
def add_pair_hinge_grad(p, r2, nu, rho, grad):
    """grad += d/dp of the multiplier-shifted hinge penalty over agent pairs.

    Per constraint the term is ``rho * max(0, g + nu/(2 rho))^2`` with the
    signed gap ``g = r2 - d2``; on the infeasible side (g > 0) this equals
    ``nu*h + rho*h^2`` exactly, and across the boundary it is continuously
    differentiable so fixed-step descent does not chatter at the kink.
    """
    na = p.shape[0]
    H = p.shape[1]
    k = 0
    for i in range(na - 1):
        for j in range(i + 1, na):
            for t in range(H):
                dx = p[i, t, 0] - p[j, t, 0]
                dy = p[i, t, 1] - p[j, t, 1]
                d2 = dx * dx + dy * dy
                shift = nu[k, t] / (2.0 * rho)
                if d2 < r2 + shift:
                    if d2 < DEGENERATE_EPS * DEGENERATE_EPS:
                        dx = DEGENERATE_EPS
                        dy = 0.0
                        d2 = DEGENERATE_EPS * DEGENERATE_EPS
                    c = -4.0 * rho * (r2 - d2 + shift)
                    grad[i, t, 0] += c * dx
                    grad[i, t, 1] += c * dy
                    grad[j, t, 0] -= c * dx
                    grad[j, t, 1] -= c * dy
            k += 1


@njit(cache=True)
def add_obstacle_hinge_grad(p, centers, r2, nu, rho, grad):
    """grad += d/dp of the multiplier-shifted hinge penalty, agent-obstacle."""
    na = p.shape[0]
    H = p.shape[1]
    no = centers.shape[0]
    for i in range(na):
        for j in range(no):
            for t in range(H):
                dx = p[i, t, 0] - centers[j, 0]
                dy = p[i, t, 1] - centers[j, 1]
                d2 = dx * dx + dy * dy
                shift = nu[i, j, t] / (2.0 * rho)
                if d2 < r2[j] + shift:
                    if d2 < DEGENERATE_EPS * DEGENERATE_EPS:
                        dx = DEGENERATE_EPS
                        dy = 0.0
                        d2 = DEGENERATE_EPS * DEGENERATE_EPS
                    c = -4.0 * rho * (r2[j] - d2 + shift)
                    grad[i, t, 0] += c * dx
                    grad[i, t, 1] += c * dy


@njit(cache=True)
def add_velocity_excess_grad(p, vstep, grad):
    """grad += d/dp of sum over steps of max(0, |step| - vstep)^2."""
    na = p.shape[0]
    H = p.shape[1]
    for a in range(na):
        for h in range(H - 1):
            dx = p[a, h + 1, 0] - p[a, h, 0]
            dy = p[a, h + 1, 1] - p[a, h, 1]
            d = np.sqrt(dx * dx + dy * dy)
            if d > vstep:
                c = 2.0 * (d - vstep) / d
                grad[a, h + 1, 0] += c * dx
                grad[a, h + 1, 1] += c * dy
                grad[a, h, 0] -= c * dx
                grad[a, h, 1] -= c * dy


@njit(cache=True)
def max_hinge(p, r2a, centers, r2o):
    """Largest hinge residual over both collision families."""
    na = p.shape[0]
    H = p.shape[1]
    no = centers.shape[0]
    worst = 0.0
    for i in range(na - 1):
        for j in range(i + 1, na):
            for t in range(H):
                dx = p[i, t, 0] - p[j, t, 0]
                dy = p[i, t, 1] - p[j, t, 1]
                h = r2a - (dx * dx + dy * dy)
                if h > worst:
                    worst = h
    for i in range(na):
        for j in range(no):
            for t in range(H):
                dx = p[i, t, 0] - centers[j, 0]
                dy = p[i, t, 1] - centers[j, 1]
                h = r2o[j] - (dx * dx + dy * dy)
                if h > worst:
                    worst = h
    return worst


@njit(cache=True)
def dykstra_velocity(p, vstep, iters, tol):
    """Project interior points onto the per-step velocity sets in place.

    ``p[:, 0]`` and ``p[:, -1]`` are treated as pinned boundary values.  The
    H-1 step constraints are split into two blocks of pairwise-disjoint
    constraints (even pairs and odd pairs); each block projects in closed
    form and Dykstra's correction vectors make the alternation converge to
    the exact projection onto the intersection.  A sweep ends the loop only
    when the iterate has stopped moving and actually satisfies every step
    constraint; near-degenerate instances (span close to the reach limit)
    converge slowly and need the full budget.  Returns sweeps used (the
    maximum over agents).
    """
    na = p.shape[0]
    H = p.shape[1]
    if H <= 2:
        return 0
    used = 0
    for a in range(na):
        qe = np.zeros((H, 2))
        qo = np.zeros((H, 2))
        for it in range(iters):
            move = 0.0
            for block in range(2):
                if block == 0:
                    start = 0
                    q = qe
                else:
                    start = 1
                    q = qo
                for h in range(start, H - 1, 2):
                    apin = h == 0
                    bpin = h + 1 == H - 1
                    if apin and bpin:
                        continue
                    ax = p[a, h, 0]
                    ay = p[a, h, 1]
                    bx = p[a, h + 1, 0]
                    by = p[a, h + 1, 1]
                    if not apin:
                        ax += q[h, 0]
                        ay += q[h, 1]
                    if not bpin:
                        bx += q[h + 1, 0]
                        by += q[h + 1, 1]
                    dx = bx - ax
                    dy = by - ay
                    d = np.sqrt(dx * dx + dy * dy)
                    if d > vstep:
                        if apin:
                            s = vstep / d
                            nax = ax
                            nay = ay
                            nbx = ax + dx * s
                            nby = ay + dy * s
                        elif bpin:
                            s = vstep / d
                            nax = bx - dx * s
                            nay = by - dy * s
                            nbx = bx
                            nby = by
                        else:
                            e = 0.5 * (d - vstep) / d
                            nax = ax + e * dx
                            nay = ay + e * dy
                            nbx = bx - e * dx
                            nby = by - e * dy
                    else:
                        nax = ax
                        nay = ay
                        nbx = bx
                        nby = by
                    if not apin:
                        q[h, 0] = ax - nax
                        q[h, 1] = ay - nay
                        da = abs(p[a, h, 0] - nax) + abs(p[a, h, 1] - nay)
                        if da > move:
                            move = da
                        p[a, h, 0] = nax
                        p[a, h, 1] = nay
                    if not bpin:
                        q[h + 1, 0] = bx - nbx
                        q[h + 1, 1] = by - nby
                        db = abs(p[a, h + 1, 0] - nbx) + abs(p[a, h + 1, 1] - nby)
                        if db > move:
                            move = db
                        p[a, h + 1, 0] = nbx
                        p[a, h + 1, 1] = nby
            if it + 1 > used:
                used = it + 1
            if move < tol:
                worst = 0.0
                for h in range(H - 1):
                    dx = p[a, h + 1, 0] - p[a, h, 0]
                    dy = p[a, h + 1, 1] - p[a, h, 1]
                    exc = np.sqrt(dx * dx + dy * dy) - vstep
                    if exc > worst:
                        worst = exc
                if worst <= 1e-10:
                    break
    return used


@njit(cache=True)
def expert_inner(p, cost_weight, starts, goals, r2a, nu_a, rho_a, centers,
                 r2o, nu_o, rho_o, vstep, step, max_inner, inner_tol,
                 dyk_iters, dyk_tol):
    """Inner minimizer for the expert solver, in place.

    Same loop as ``penalized_inner`` with the proximity term replaced by
    ``cost_weight * sum of squared segment lengths``, so the iterate is
    pulled toward the smoothest path between its pinned endpoints instead
    of toward a reference point.  Returns iterations used.
    """
    na = p.shape[0]
    H = p.shape[1]
    grad = np.empty((na, H, 2))
    prev = np.empty((na, H, 2))
    took = 0
    for it in range(max_inner):
        for a in range(na):
            for t in range(H):
                prev[a, t, 0] = p[a, t, 0]
                prev[a, t, 1] = p[a, t, 1]
                grad[a, t, 0] = 0.0
                grad[a, t, 1] = 0.0
        for a in range(na):
            for h in range(H - 1):
                dx = p[a, h + 1, 0] - p[a, h, 0]
                dy = p[a, h + 1, 1] - p[a, h, 1]
                grad[a, h + 1, 0] += 2.0 * cost_weight * dx
                grad[a, h + 1, 1] += 2.0 * cost_weight * dy
                grad[a, h, 0] -= 2.0 * cost_weight * dx
                grad[a, h, 1] -= 2.0 * cost_weight * dy
        add_pair_hinge_grad(p, r2a, nu_a, rho_a, grad)
        add_obstacle_hinge_grad(p, centers, r2o, nu_o, rho_o, grad)
        for a in range(na):
            for t in range(H):
                p[a, t, 0] -= step * grad[a, t, 0]
                p[a, t, 1] -= step * grad[a, t, 1]
        for a in range(na):
            p[a, 0, 0] = starts[a, 0]
            p[a, 0, 1] = starts[a, 1]
            p[a, H - 1, 0] = goals[a, 0]
            p[a, H - 1, 1] = goals[a, 1]
        dykstra_velocity(p, vstep, dyk_iters, dyk_tol)
        took = it + 1
        move = 0.0
        for a in range(na):
            for t in range(H):
                m = abs(p[a, t, 0] - prev[a, t, 0]) + abs(p[a, t, 1] - prev[a, t, 1])
                if m > move:
                    move = m
        if move < inner_tol:
            break
    return took


@njit(cache=True)
def penalized_inner(p, x_in, starts, goals, r2a, nu_a, rho_a, centers, r2o,
                    nu_o, rho_o, vstep, step, max_inner, inner_tol,
                    dyk_iters, dyk_tol):
    """Projected gradient descent on the augmented objective, in place.

    Minimizes ``|p - x_in|^2 + nu.H + rho|H|^2`` over the velocity+endpoint
    set: gradient step, then exact convex projection.  Stops when the sweep
    movement drops below ``inner_tol``.  Returns iterations used.
    """
    na = p.shape[0]
    H = p.shape[1]
    grad = np.empty((na, H, 2))
    prev = np.empty((na, H, 2))
    took = 0
    for it in range(max_inner):
        for a in range(na):
            for t in range(H):
                prev[a, t, 0] = p[a, t, 0]
                prev[a, t, 1] = p[a, t, 1]
                grad[a, t, 0] = 2.0 * (p[a, t, 0] - x_in[a, t, 0])
                grad[a, t, 1] = 2.0 * (p[a, t, 1] - x_in[a, t, 1])
        add_pair_hinge_grad(p, r2a, nu_a, rho_a, grad)
        add_obstacle_hinge_grad(p, centers, r2o, nu_o, rho_o, grad)
        for a in range(na):
            for t in range(H):
                p[a, t, 0] -= step * grad[a, t, 0]
                p[a, t, 1] -= step * grad[a, t, 1]
        for a in range(na):
            p[a, 0, 0] = starts[a, 0]
            p[a, 0, 1] = starts[a, 1]
            p[a, H - 1, 0] = goals[a, 0]
            p[a, H - 1, 1] = goals[a, 1]
        dykstra_velocity(p, vstep, dyk_iters, dyk_tol)
        took = it + 1
        move = 0.0
        for a in range(na):
            for t in range(H):
                m = abs(p[a, t, 0] - prev[a, t, 0]) + abs(p[a, t, 1] - prev[a, t, 1])
                if m > move:
                    move = m
        if move < inner_tol:
            break
    return took
