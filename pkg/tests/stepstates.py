"""Factory for hand-built StepState batches used by the scoring tests."""

import numpy as np

from boulderpick.state import StepState

# a quiet pose: stationary arm, bucket staged above ground, rock ahead on
# the centerline at rest. No reward/termination trigger is active except
# the always-on alignment shaping and the proximity window.
_DEFAULTS = dict(
    q=np.zeros(5),
    qd=np.zeros(5),
    chi=0.0,
    bucket_pos_rb=np.array([2.5, 0.0, 0.9]),
    edge_rb=np.array([2.25, 0.0, 0.4]),
    edge_vel_rb=np.zeros(3),
    bottom_z=0.45,
    rock_pos_w=np.array([3.5, 0.0, 0.3]),
    rock_pos_rb=np.array([3.5, 0.0, 0.3]),
    rock_z_gain=0.0,
    in_shovel=False,
    in_soil=False,
    edge_depth=0.0,
    base_vel=0.0,
    action=np.zeros(5),
    prev_action=np.zeros(5),
    t=1.0,
    fault=False,
)


def make_state(n=1, **overrides) -> StepState:
    """StepState with every field broadcast to batch size n.

    Scalar or single-row overrides apply to all rows; pass full (n, ...)
    arrays to vary rows individually.
    """
    fields = {}
    for name, default in _DEFAULTS.items():
        val = overrides.pop(name, default)
        base = np.asarray(val)
        want = (n,) + np.shape(default)
        if base.shape == want:
            fields[name] = base.copy()
        else:
            fields[name] = np.broadcast_to(base, want).copy()
    if overrides:
        raise TypeError(f"unknown fields: {sorted(overrides)}")
    return StepState(**fields)
