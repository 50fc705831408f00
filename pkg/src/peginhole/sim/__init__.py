from .camera import Camera, depth_to_cloud, load_depth, render, save_depth
from .objects import BODIES, SEEN_SHAPES, UNSEEN_SHAPES, HoleObject, Peg
from .world import (
    InsertionResult,
    Scene,
    TrialConfig,
    Workspace,
    capture,
    drop_peg_points,
    check_insertion,
    move_ee,
    render_depth,
    sample_scene,
    scene_from_text,
    scene_to_text,
    target_pose,
)
