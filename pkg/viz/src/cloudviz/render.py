"""Plot kinds: loss curves, index-colored 2D grids, orthographic 3D
scatters, mesh wireframes, and the per-count feature-distance curve."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np

from . import io

KINDS = ("loss", "grid", "cloud", "mesh", "dk")


@dataclass(frozen=True)
class RenderJob:
    kind: str
    input_path: str
    output_path: str
    azimuth: float = 30.0    # degrees, 3D views only
    elevation: float = 20.0
    title: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown plot kind {self.kind!r}; "
                             f"options: {KINDS}")


def ortho_axes(azimuth: float, elevation: float) -> tuple[np.ndarray, np.ndarray]:
    """Screen basis (right, up) for an orthographic view direction."""
    az = np.radians(azimuth)
    el = np.radians(elevation)
    direction = np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az),
                          np.sin(el)])
    pole = np.array([0.0, 0.0, 1.0])
    right = np.cross(pole, direction)
    if np.linalg.norm(right) < 1e-12:  # looking straight down the pole
        right = np.array([1.0, 0.0, 0.0])
    right = right / np.linalg.norm(right)
    up = np.cross(direction, right)
    return right, up


def project(points: np.ndarray, azimuth: float, elevation: float) -> np.ndarray:
    right, up = ortho_axes(azimuth, elevation)
    return np.stack([points @ right, points @ up], axis=1)


def _finish(fig, ax, job: RenderJob):
    if job.title:
        ax.set_title(job.title)
    fig.tight_layout()
    fig.savefig(job.output_path, dpi=120)
    plt.close(fig)


def render_loss(job: RenderJob) -> None:
    cols = io.read_csv_columns(job.input_path, ["epoch", "loss"])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(cols["epoch"], cols["loss"], marker=".", lw=1.2)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.grid(alpha=0.3)
    _finish(fig, ax, job)


def render_grid(job: RenderJob) -> None:
    cols = io.read_csv_columns(job.input_path, ["u", "v"])
    u, v = cols["u"], cols["v"]
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    if u.size == 0:
        warnings.warn(f"{job.input_path}: empty point set, blank axes")
    else:
        ax.scatter(u, v, c=np.arange(u.size), cmap="viridis", s=6, lw=0)
    ax.set_aspect("equal")
    ax.set_xlabel("u")
    ax.set_ylabel("v")
    _finish(fig, ax, job)


def render_cloud(job: RenderJob) -> None:
    pts = io.read_ply(job.input_path)
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    if pts.shape[0] == 0:
        warnings.warn(f"{job.input_path}: empty point cloud, blank axes")
    else:
        xy = project(pts, job.azimuth, job.elevation)
        ax.scatter(xy[:, 0], xy[:, 1], c=np.arange(len(xy)), cmap="viridis",
                   s=4, lw=0)
    ax.set_aspect("equal")
    ax.set_axis_off()
    _finish(fig, ax, job)


def render_mesh(job: RenderJob) -> None:
    verts, faces = io.read_obj(job.input_path)
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    if not faces:
        warnings.warn(f"{job.input_path}: no faces, blank axes")
    else:
        xy = project(verts, job.azimuth, job.elevation)
        segments = []
        for face in faces:
            for a, b in zip(face, face[1:] + face[:1]):
                segments.append([xy[a], xy[b]])
        from matplotlib.collections import LineCollection
        ax.add_collection(LineCollection(segments, colors="tab:blue", lw=0.5))
        ax.autoscale()
    ax.set_aspect("equal")
    ax.set_axis_off()
    _finish(fig, ax, job)


def render_dk(job: RenderJob) -> None:
    cols = io.read_csv_columns(job.input_path, ["k", "d_norm", "stderr"])
    fig, ax = plt.subplots(figsize=(4.6, 3.2))
    ax.errorbar(cols["k"], cols["d_norm"], yerr=cols["stderr"], marker="o",
                capsize=3, lw=1.2)
    ax.set_xlabel("object count k")
    ax.set_ylabel("normalized distance to max-count mean")
    ax.grid(alpha=0.3)
    _finish(fig, ax, job)


RENDERERS = {
    "loss": render_loss,
    "grid": render_grid,
    "cloud": render_cloud,
    "mesh": render_mesh,
    "dk": render_dk,
}


def render(job: RenderJob) -> None:
    """Render one job to PNG; read-only on inputs and safe to re-run."""
    RENDERERS[job.kind](job)
