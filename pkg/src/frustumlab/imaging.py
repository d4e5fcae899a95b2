"""Flat synthetic shot renders for UI display: 8-bit grayscale PNGs with a
dark disc per visible landmark on a light background. The primary pipeline
never needs these images; geometry lives in the landmark pixels."""

from __future__ import annotations

from pathlib import Path

from PIL import Image, ImageDraw

BACKGROUND = 225
DISC_VALUE = 45
DISC_RADIUS_PX = 7


def render_shot_png(intrinsics, landmarks, render_dir, session_id: str, shot_id: str) -> Path:
    w, h = (int(v) for v in intrinsics.image_size)
    img = Image.new("L", (w, h), BACKGROUND)
    draw = ImageDraw.Draw(img)
    for name in sorted(landmarks):
        obs = landmarks[name]
        if not obs.visible or obs.pixel is None:
            continue
        u, v = float(obs.pixel[0]), float(obs.pixel[1])
        r = DISC_RADIUS_PX
        draw.ellipse([u - r, v - r, u + r, v + r], fill=DISC_VALUE)
    out_dir = Path(render_dir) / session_id
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{shot_id}.png"
    img.save(path)
    return path
