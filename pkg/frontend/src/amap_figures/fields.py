"""Field-slice figures: truth, reconstruction, absolute error.

Consumes the npz field-dump format (keys: origin, resolution, shape,
values) and the trajectory-dump format (keys: times, est_positions,
true_positions). All panels show the horizontal slice nearest the
requested z, with the estimated trajectory polyline and measurement-site
markers overlaid.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIELD_KEYS = ("origin", "resolution", "shape", "values")


class GridMismatchError(ValueError):
    pass


def load_dump(path) -> dict:
    with np.load(path) as data:
        return {key: data[key].copy() for key in data.files}


def _check_field(dump, path):
    missing = [k for k in FIELD_KEYS if k not in dump]
    if missing:
        raise GridMismatchError(f"{path}: missing keys {missing}")


def _slice_index(dump, z: float) -> int:
    nz = int(dump["shape"][2])
    zs = dump["origin"][2] + dump["resolution"][2] * np.arange(nz)
    return int(np.argmin(np.abs(zs - z)))


def plot_field_slice(
    truth_path, posterior_path, trajectory_path, z: float, out_path
) -> Path:
    """Truth / reconstruction / |error| panels at the slice nearest z."""
    truth = load_dump(truth_path)
    post = load_dump(posterior_path)
    _check_field(truth, truth_path)
    _check_field(post, posterior_path)
    for key in ("origin", "resolution", "shape"):
        if not np.allclose(truth[key], post[key]):
            raise GridMismatchError(
                f"{key} differs between {truth_path} and {posterior_path}"
            )
    traj = load_dump(trajectory_path)

    shape = tuple(int(s) for s in truth["shape"])
    vol_t = truth["values"].reshape(shape)
    vol_p = post["values"].reshape(shape)
    iz = _slice_index(truth, z)
    z_actual = float(truth["origin"][2] + truth["resolution"][2] * iz)

    extent = [
        truth["origin"][0],
        truth["origin"][0] + truth["resolution"][0] * (shape[0] - 1),
        truth["origin"][1],
        truth["origin"][1] + truth["resolution"][1] * (shape[1] - 1),
    ]
    panels = [
        (vol_t[:, :, iz], f"ground truth (z = {z_actual:g} m)", "viridis"),
        (vol_p[:, :, iz], "reconstruction", "viridis"),
        (np.abs(vol_t[:, :, iz] - vol_p[:, :, iz]), "absolute error", "magma"),
    ]
    fig, axes = plt.subplots(1, 3, figsize=(13.5, 4.2))
    for ax, (img, title, cmap) in zip(axes, panels):
        # volume axis 0 is x, axis 1 is y; show x horizontal, y vertical
        im = ax.imshow(
            img.T, origin="lower", extent=extent, cmap=cmap, aspect="equal"
        )
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_title(title)
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        est = np.asarray(traj["est_positions"], float)
        ax.plot(est[:, 0], est[:, 1], color="white", lw=1.0, alpha=0.9)
        ax.scatter(est[:, 0], est[:, 1], s=12, facecolors="none",
                   edgecolors="white", linewidths=0.8)
    fig.tight_layout()
    out = Path(out_path)
    fig.savefig(out, dpi=110)
    plt.close(fig)
    return out
