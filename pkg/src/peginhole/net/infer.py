"""Single-cloud inference wrappers and the tool-frame convention of the offset network.

The offset network looks at the crop expressed in the end-effector (tool)
frame and answers in that frame, which makes what it has to learn independent
of where the hole sits in the world. Offsets are converted to the world-frame
update ``R' = dR @ R``, ``t' = t + dt`` before they leave this module.
"""

from __future__ import annotations

import numpy as np

from ..cloud import as_cloud, decode_candidates
from ..geom import Pose, apply, euler_to_rotation, invert, rotation_to_euler


def oakn_forward(model, cloud):
    """Return ``(candidates (N, 3, 3), confidence (N,))`` in float64."""
    pts = as_cloud(cloud)
    off, conf = model.forward(pts)
    return decode_candidates(pts, off.data[0].astype(np.float64)), conf.data[0].astype(np.float64)


def to_tool_frame(cloud, ee_pose: Pose) -> np.ndarray:
    return apply(invert(ee_pose), np.asarray(cloud, dtype=np.float64))


def offsets_to_tool(dt, dr, ee_pose: Pose) -> np.ndarray:
    """World ``(dt, dr)`` to the tool-frame 6-vector the network is trained on."""
    r = ee_pose.rotation
    dt_l = r.T @ np.asarray(dt, dtype=np.float64)
    dr_l = rotation_to_euler(r.T @ euler_to_rotation(dr) @ r)
    return np.concatenate([dt_l, dr_l])


def offsets_from_tool(v6, ee_pose: Pose):
    v6 = np.asarray(v6, dtype=np.float64)
    r = ee_pose.rotation
    dt = r @ v6[:3]
    dr = rotation_to_euler(r @ euler_to_rotation(v6[3:]) @ r.T)
    return dt, dr


def opn_forward(model, cloud, ee_pose: Pose):
    """World-frame ``(dt, dr)`` predicted from a world-frame crop."""
    local = to_tool_frame(as_cloud(cloud), ee_pose)
    out = model.forward(local).data[0]
    return offsets_from_tool(out, ee_pose)
