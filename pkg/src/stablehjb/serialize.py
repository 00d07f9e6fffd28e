"""Solution-file serialization: one JSON header line plus little-endian tensors."""

import csv
import json

import numpy as np

from .hjb import GridValueFunction, HJBSolution, MCSpec
from .spectrum import SpectralModel

_FORMAT = "stablehjb-solution"
_VERSION = 1


def save_solution(solution, path):
    """Write a solution file: JSON metadata line, then raw '<f8' value and gradient tensors."""
    gf = solution.grid_fn
    model = solution.model
    header = {
        "format": _FORMAT,
        "version": _VERSION,
        "model": {
            "n_modes": model.n_modes,
            "gammas": model.gammas.tolist(),
            "betas": model.betas.tolist(),
            "alpha": model.alpha,
            "gamma_smooth": model.gamma_smooth,
            "c_bar": model.c_bar,
            "schedule_id": model.schedule_id,
        },
        "time_grid": gf.time_grid.tolist(),
        "box_halfwidth": gf.box_halfwidth,
        "nodes_per_axis": gf.nodes_per_axis,
        "n_modes": gf.n_modes,
        "radius": solution.radius,
        "converged": solution.converged,
        "residual_history": solution.residual_history.tolist(),
        "c1gamma_norm": solution.c1gamma_norm,
        "clipped_fraction": solution.clipped_fraction,
        "mc": {"n_mc": solution.mc_spec.n_mc, "seed": solution.mc_spec.seed},
        "quadrature": solution.quadrature_spec,
        "values_shape": list(gf.values.shape),
        "gradients_shape": list(gf.gradients.shape),
        "dtype": "<f8",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(gf.values).astype("<f8").tobytes())
        fh.write(np.ascontiguousarray(gf.gradients).astype("<f8").tobytes())


def load_solution(path):
    """Read a solution file back into an HJBSolution (problem data not included)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.index(b"\n")
    header = json.loads(raw[:newline].decode("utf-8"))
    if header.get("format") != _FORMAT:
        raise ValueError(f"{path} is not a solution file")
    if header.get("version") != _VERSION:
        raise ValueError(f"unsupported solution version {header.get('version')}")
    values_shape = tuple(header["values_shape"])
    gradients_shape = tuple(header["gradients_shape"])
    body = raw[newline + 1:]
    n_values = int(np.prod(values_shape))
    values = np.frombuffer(body[:8 * n_values], dtype="<f8").reshape(values_shape).copy()
    gradients = np.frombuffer(body[8 * n_values:], dtype="<f8").reshape(gradients_shape).copy()

    md = header["model"]
    model = SpectralModel(n_modes=md["n_modes"], gammas=np.asarray(md["gammas"]),
                          betas=np.asarray(md["betas"]), alpha=md["alpha"],
                          gamma_smooth=md["gamma_smooth"], c_bar=md["c_bar"],
                          schedule_id=md["schedule_id"])
    grid_fn = GridValueFunction(time_grid=np.asarray(header["time_grid"]),
                                box_halfwidth=header["box_halfwidth"],
                                nodes_per_axis=header["nodes_per_axis"],
                                n_modes=header["n_modes"],
                                values=values, gradients=gradients)
    return HJBSolution(grid_fn=grid_fn,
                       residual_history=np.asarray(header["residual_history"]),
                       c1gamma_norm=header["c1gamma_norm"],
                       mc_spec=MCSpec(n_mc=header["mc"]["n_mc"], seed=header["mc"]["seed"]),
                       quadrature_spec=header["quadrature"],
                       converged=header["converged"],
                       clipped_fraction=header["clipped_fraction"],
                       radius=header["radius"], model=model, problem=None)


def export_level_csv(solution, level, path):
    """Dump one time level as CSV: node coordinates, value, gradient components."""
    gf = solution.grid_fn
    if not 0 <= level < gf.time_grid.size:
        raise ValueError(f"level must be in [0, {gf.time_grid.size - 1}], got {level}")
    pts = gf.node_points()
    vals = gf.values[level].ravel()
    grads = gf.gradients[level].reshape(-1, gf.n_modes)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{i + 1}" for i in range(gf.n_modes)] + ["u"]
                        + [f"du_{i + 1}" for i in range(gf.n_modes)])
        for row in range(pts.shape[0]):
            writer.writerow([repr(float(v)) for v in pts[row]]
                            + [repr(float(vals[row]))]
                            + [repr(float(g)) for g in grads[row]])
