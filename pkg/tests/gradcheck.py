"""Central finite-difference oracle shared by the unit and acceptance suites."""

import numpy as np

FD_STEP = 1e-4
REL_TOL = 1e-3
# below this magnitude both gradients are numerically zero and relative error is meaningless
ABS_FLOOR = 1e-7


def relative_error(analytic, numeric, floor=ABS_FLOOR):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def fd_entry(loss_of_params, params, name, index, step=FD_STEP):
    """Central difference of a scalar loss with respect to one tensor entry."""
    t = params.tensors[name]
    old = t[index]
    t[index] = old + step
    up = loss_of_params(params)
    t[index] = old - step
    down = loss_of_params(params)
    t[index] = old
    return (up - down) / (2 * step)


def fd_direction(loss_of_params, params, direction, step=FD_STEP):
    """Central difference along a unit direction in flat parameter space."""
    flat = params.flat()
    up = loss_of_params(params.with_flat(flat + step * direction))
    down = loss_of_params(params.with_flat(flat - step * direction))
    return (up - down) / (2 * step)


def flat_grad(params, grads):
    return np.concatenate([grads[k].ravel() for k in params.tensors])


def check_entries(loss_of_params, params, grads, entries, step=FD_STEP):
    """Max relative error over the given ``(name, index)`` entries."""
    worst = 0.0
    for name, index in entries:
        numeric = fd_entry(loss_of_params, params, name, index, step)
        worst = max(worst, float(relative_error(grads[name][index], numeric)))
    return worst


def all_entries(params):
    return [(name, idx) for name, t in params.tensors.items() for idx in np.ndindex(t.shape)]


def sampled_entries(params, rng, per_tensor):
    """Up to ``per_tensor`` random entries from every tensor."""
    out = []
    for name, t in params.tensors.items():
        flat = rng.choice(t.size, size=min(per_tensor, t.size), replace=False)
        out += [(name, np.unravel_index(int(i), t.shape)) for i in flat]
    return out
