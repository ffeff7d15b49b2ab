import numpy as np
import pytest


def look_at_camera(center, target, focal=3000.0, size=(3840, 2160)):
    """Pinhole camera P = K [R | -R C] looking from ``center`` at ``target`` (z up)."""
    center = np.asarray(center, dtype=float)
    fwd = np.asarray(target, dtype=float) - center
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    rot = np.vstack([right, down, fwd])
    k = np.array([[focal, 0, size[0] / 2], [0, focal, size[1] / 2], [0, 0, 1.0]])
    return k @ np.column_stack([rot, -rot @ center])


def project(p, xyz):
    xyz = np.atleast_2d(xyz)
    hom = np.column_stack([xyz, np.ones(len(xyz))]) @ p.T
    return hom[:, :2] / hom[:, 2:]


def lane_ticks(x0=0.0, lanes=4, ticks=3, spacing=40.0, width=12.0, sign=1.0):
    xs = x0 + spacing * np.arange(ticks)
    ys = sign * width * np.arange(lanes)
    return np.array([[x, y, 0.0] for x in xs for y in ys])


@pytest.fixture
def synthetic_camera():
    p = look_at_camera([60.0, -110.0, 110.0], [60.0, 30.0, 0.0])
    return p / p[2, 3]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
