"""Replay frames: rendered color maps with the decoded motion overlaid.

Frames are binary PPM (P6), one per step, plus a structured text record of
each motion for offline inspection.
"""

from __future__ import annotations

import numpy as np

from .decode import DecodedMotion
from .world import Observation, Scene, world_to_pixel

CROSS_COLOR = (255, 40, 40)
PATH_COLOR = (255, 255, 255)
START_COLOR = (60, 120, 255)


def observation_to_rgb(obs: Observation) -> np.ndarray:
    img = (np.clip(obs.color, 0.0, 1.0) * 255).astype(np.uint8)
    return np.transpose(img, (1, 2, 0)).copy()


def write_ppm(path, img: np.ndarray) -> None:
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode())
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def _plot(img, row, col, color):
    if 0 <= row < img.shape[0] and 0 <= col < img.shape[1]:
        img[row, col] = color


def _line(img, r0, c0, r1, c1, color):
    """Bresenham segment."""
    dr, dc = abs(r1 - r0), abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dr - dc
    r, c = r0, c0
    while True:
        _plot(img, r, c, color)
        if r == r1 and c == c1:
            return
        e2 = 2 * err
        if e2 > -dc:
            err -= dc
            r += sr
        if e2 < dr:
            err += dr
            c += sc


def render_frame(scene: Scene, obs: Observation, motion: DecodedMotion) -> np.ndarray:
    img = observation_to_rgb(obs)
    ws = scene.workspace
    if motion.kind == "grasp":
        px = world_to_pixel(motion.grasp.translation[:2], ws)
        if px is not None:
            r, c = px
            for k in range(-4, 5):
                _plot(img, r + k, c + k, CROSS_COLOR)
                _plot(img, r + k, c - k, CROSS_COLOR)
    elif motion.kind == "push":
        for path in motion.paths:
            pts = [world_to_pixel(p[:2], ws) for p in path.waypoints]
            pts = [p for p in pts if p is not None]
            for a, b in zip(pts[:-1], pts[1:]):
                _line(img, a[0], a[1], b[0], b[1], PATH_COLOR)
            if pts:
                r, c = pts[0]
                for dr in (-1, 0, 1):
                    for dc in (-1, 0, 1):
                        _plot(img, r + dr, c + dc, START_COLOR)
    return img


def motion_record(step: int, motion: DecodedMotion) -> str:
    if motion.kind == "grasp":
        t = motion.grasp.translation
        a = motion.grasp.orientation.approach
        return (f"step {step} grasp xyz {t[0]:.4f} {t[1]:.4f} {t[2]:.4f} "
                f"approach {a[0]:.4f} {a[1]:.4f} {a[2]:.4f} "
                f"angle {motion.grasp.orientation.in_plane:.4f}")
    if motion.kind == "push":
        parts = [f"step {step} push paths {len(motion.paths)}"]
        for path in motion.paths:
            wps = " ".join(f"{p[0]:.4f},{p[1]:.4f},{p[2]:.4f}" for p in path.waypoints)
            parts.append(f"  {path.arm} {wps}")
        return "\n".join(parts)
    return f"step {step} invalid {motion.reason}"
