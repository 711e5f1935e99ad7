"""``mixcert`` command line: bound, solve, certify, experiment, segment.

Every run is driven by one JSON config, validated against ``CONFIG_SCHEMA``
before anything is computed.  Outputs go to ``--out`` (or the config's
``output_dir``) together with a ``manifest.json`` of sha256 hashes.
Exit codes: 0 success, 2 bound not converged, 1 any error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from datetime import datetime, timezone
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, kernels
from .bound import ConvexEmConfig, convex_em, convex_em_chunked
from .certification import certify, config_hash, tightness_curve, write_curve_csv
from .errors import MixcertError
from .experiments import restarts_study, separation_sweep, write_rows_csv
from .io import read_component_set, read_dataset_csv, read_ppm, write_ppm
from .likelihood import DEFAULT_MEMORY_BUDGET, WeightVector, build_matrix, save_matrix
from .models import (
    ComponentSet,
    Dataset,
    GaussianComponent,
    GridSpec,
    MixtureModel,
    Rectangles,
    build_grid_set,
    grid_sites,
    pixel_features,
    sample_mixture,
    sample_rectangles,
)
from .segmentation import DEFAULT_PIXEL_CAP, segment, subsample_pixels
from .solvers import EmConfig, brute_force_mle, projected_em_multistart

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2

_num = {"type": "number"}
_pos_int = {"type": "integer", "minimum": 1}
_nonneg_int = {"type": "integer", "minimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


CONFIG_SCHEMA = _obj(
    {
        "data": {
            "oneOf": [
                _obj({"csv": {"type": "string"}}, ["csv"]),
                _obj(
                    {
                        "synthetic": _obj(
                            {
                                "weights": _vec,
                                "means": _mat,
                                "covs": {"type": "array", "items": _mat, "minItems": 1},
                                "n": _pos_int,
                                "seed": _nonneg_int,
                            },
                            ["weights", "means", "covs", "n"],
                        )
                    },
                    ["synthetic"],
                ),
                _obj(
                    {
                        "rectangles": _obj(
                            {
                                "boxes": {"type": "array", "items": _mat, "minItems": 1},
                                "weights": _vec,
                                "n": _pos_int,
                                "seed": _nonneg_int,
                            },
                            ["boxes", "n"],
                        )
                    },
                    ["rectangles"],
                ),
                _obj(
                    {
                        "image": _obj(
                            {"path": {"type": "string"}, "pixel_cap": _pos_int, "seed": _nonneg_int},
                            ["path"],
                        )
                    },
                    ["image"],
                ),
            ]
        },
        "models": {
            "oneOf": [
                _obj({"json": {"type": "string"}}, ["json"]),
                _obj(
                    {
                        "grid": _obj(
                            {
                                "means": _mat,
                                "sites": _obj(
                                    {"xlim": _vec, "ylim": _vec, "nx": _pos_int, "ny": _pos_int},
                                    ["xlim", "ylim", "nx", "ny"],
                                ),
                                "eigenvalues": _vec,
                                "angles": _vec,
                                "pairing": {"enum": ["upper", "full"]},
                            },
                            ["eigenvalues"],
                        )
                    },
                    ["grid"],
                ),
                _obj(
                    {
                        "patches": _obj(
                            {
                                "sizes": {"type": "array", "items": {"type": "array", "items": _pos_int, "minItems": 2, "maxItems": 2}, "minItems": 1},
                                "stride": _pos_int,
                                "trim_fraction": _num,
                            },
                            ["sizes"],
                        )
                    },
                    ["patches"],
                ),
            ]
        },
        "k": _pos_int,
        "bound": _obj(
            {
                "max_iterations": _pos_int,
                "gap_tolerance": _num,
                "relative_ll_tolerance": _num,
                "eta": _num,
                "prune_threshold": _num,
                "init": {"enum": ["uniform", "random"]},
                "seed": _nonneg_int,
                "chunked": {"type": "boolean"},
                "column_block": _pos_int,
            }
        ),
        "em": _obj({"max_iterations": _pos_int, "relative_ll_tolerance": _num, "covariance_ridge": _num}),
        "solve": _obj(
            {
                "restarts": _pos_int,
                "seed": _nonneg_int,
                "refit": {"type": "boolean"},
                "metric": {"enum": ["sym_kl", "euclidean"]},
                "brute_force": {"type": "boolean"},
                "enumeration_budget": _pos_int,
            }
        ),
        "certify": _obj({"rand_samples": _pos_int, "seed": _nonneg_int}),
        "experiment": _obj(
            {
                "which": {"enum": ["tightness", "separation", "restarts"]},
                "n_grid": {"type": "array", "items": _pos_int, "minItems": 1},
                "seeds": {"type": "array", "items": _nonneg_int, "minItems": 1},
                "n": _pos_int,
                "instances": _pos_int,
                "restarts": _pos_int,
                "seed": _nonneg_int,
                "edges": {"type": "array", "items": _num, "minItems": 2},
                "box": _mat,
                "eig_range": _vec,
            }
        ),
        "output_dir": {"type": "string"},
        "memory_budget": _pos_int,
        "matrix_cache": {"type": "boolean"},
    },
    ["data", "models"],
)


class Run:
    """A validated config plus the objects it describes, built lazily."""

    def __init__(self, config: dict, base: Path, out: Path):
        self.config = config
        self.base = base
        self.out = out
        self.files: list[Path] = []
        self.memory_budget = config.get("memory_budget", DEFAULT_MEMORY_BUDGET)
        self._dataset = None
        self._cset = None
        self._matrix = None
        self._image = None

    # -- inputs

    def path(self, p) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    @property
    def image(self):
        if self._image is None:
            src = self.config["data"].get("image")
            if src is None:
                raise MixcertError("this command needs an image data source")
            self._image = read_ppm(self.path(src["path"]))
        return self._image

    @property
    def k(self) -> int:
        return int(self.config.get("k", 3))

    def generator(self):
        data = self.config["data"]
        if "synthetic" in data:
            s = data["synthetic"]
            return MixtureModel(s["weights"], s["means"], s["covs"])
        if "rectangles" in data:
            r = data["rectangles"]
            return Rectangles([tuple(b) for b in r["boxes"]], r.get("weights", ()))
        raise MixcertError("this command needs a synthetic or rectangles data source")

    @property
    def dataset(self) -> Dataset:
        if self._dataset is None:
            data = self.config["data"]
            if "csv" in data:
                self._dataset = read_dataset_csv(self.path(data["csv"]))
            elif "synthetic" in data:
                s = data["synthetic"]
                self._dataset = sample_mixture(self.generator(), s["n"], s.get("seed", 0))
            elif "rectangles" in data:
                r = data["rectangles"]
                self._dataset = sample_rectangles(self.generator(), r["n"], r.get("seed", 0))
            else:
                img = data["image"]
                feats = pixel_features(self.image).reshape(-1, 5)
                idx = subsample_pixels(feats.shape[0], img.get("pixel_cap", DEFAULT_PIXEL_CAP), img.get("seed", 0))
                self._dataset = Dataset(feats[idx])
        return self._dataset

    @property
    def cset(self) -> ComponentSet:
        if self._cset is None:
            models = self.config["models"]
            if "json" in models:
                self._cset = read_component_set(self.path(models["json"]))
            elif "grid" in models:
                g = models["grid"]
                if "means" in g:
                    means = np.array(g["means"], dtype=float)
                elif "sites" in g:
                    s = g["sites"]
                    means = grid_sites(s["xlim"], s["ylim"], s["nx"], s["ny"])
                else:
                    raise MixcertError("grid models need 'means' or 'sites'")
                spec = GridSpec(means, g["eigenvalues"], g.get("angles", [0.0]), g.get("pairing", "upper"))
                self._cset = build_grid_set(spec)
            else:
                from .models import fit_patch_models

                p = models["patches"]
                self._cset = fit_patch_models(
                    self.image, [tuple(s) for s in p["sizes"]], p.get("stride", 1), p.get("trim_fraction", 0.1)
                )
        return self._cset

    @property
    def matrix(self):
        if self._matrix is None:
            self._matrix = build_matrix(self.dataset, self.cset, self.memory_budget)
            if self.config.get("matrix_cache"):
                p = self.out / "matrix.mxll"
                save_matrix(self._matrix, p)
                self.files.append(p)
        return self._matrix

    # -- solver configs

    def bound_config(self) -> ConvexEmConfig:
        b = {k: v for k, v in self.config.get("bound", {}).items() if k not in ("chunked", "column_block")}
        return ConvexEmConfig(**b)

    def em_config(self) -> EmConfig:
        return EmConfig(self.k, **self.config.get("em", {}))

    def solve_opts(self) -> dict:
        s = {"restarts": 10, "seed": 0, "refit": True, "metric": "sym_kl", "brute_force": False, "enumeration_budget": 200_000}
        s.update(self.config.get("solve", {}))
        return s

    def certify_opts(self) -> dict:
        c = {"rand_samples": 1000, "seed": 0}
        c.update(self.config.get("certify", {}))
        return c

    # -- outputs

    def write_json(self, name, obj) -> Path:
        p = self.out / name
        p.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        self.files.append(p)
        return p

    def add(self, p: Path) -> None:
        self.files.append(p)

    def manifest(self, command: str, status: int) -> None:
        entries = []
        for p in sorted(set(self.files)):
            entries.append({"path": p.relative_to(self.out).as_posix(), "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
        doc = {
            "command": command,
            "status": status,
            "config_hash": config_hash(self.config),
            "version": __version__,
            "backend": kernels.BACKEND_NAME,
            "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
            "files": entries,
        }
        (self.out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _clean(o):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.floating, float)):
        o = float(o)
        return o if math.isfinite(o) else None
    if isinstance(o, np.integer):
        return int(o)
    return o


# ---------------------------------------------------------------- subcommands


def _bound(run: Run):
    opts = run.config.get("bound", {})
    cfg = run.bound_config()
    if opts.get("chunked"):
        return convex_em_chunked(run.dataset, run.cset, cfg, opts.get("column_block", 4096), run.memory_budget)
    return convex_em(run.matrix, cfg)


def _solve(run: Run):
    s = run.solve_opts()
    ms = projected_em_multistart(
        run.dataset, run.cset, run.matrix, run.em_config(), s["restarts"], s["seed"], refit=s["refit"], metric=s["metric"]
    )
    best = ms.best
    brute = None
    if s["brute_force"]:
        brute = brute_force_mle(run.matrix, run.k, s["enumeration_budget"])
        if brute.ll > best.ll:
            best = brute
    return ms, brute, best


def _write_trace(run: Run, ms) -> None:
    p = run.out / "restarts.csv"
    with open(p, "w", encoding="utf-8", newline="") as fh:
        fh.write("restart,continuous_ll,projected_ll,refit_ll\n")
        for r, c, pj, rf in ms.trace_rows():
            fh.write(f"{r},{c!r},{pj!r},{rf!r}\n")
    run.add(p)


def cmd_bound(run: Run) -> int:
    b = _bound(run)
    run.write_json("bound.json", b.to_dict())
    return EXIT_OK if b.converged else EXIT_NOT_CONVERGED


def cmd_solve(run: Run) -> int:
    ms, brute, best = _solve(run)
    run.write_json("solution.json", best.to_dict())
    _write_trace(run, ms)
    if brute is not None:
        run.write_json("brute_force.json", brute.to_dict())
    return EXIT_OK


def cmd_certify(run: Run) -> int:
    b = convex_em(run.matrix, run.bound_config())
    ms, _, best = _solve(run)
    c = run.certify_opts()
    cert = certify(run.matrix, run.cset, run.dataset, run.k, b, best, rand_samples=c["rand_samples"], seed=c["seed"], config=run.config)
    run.write_json("bound.json", b.to_dict())
    run.write_json("solution.json", best.to_dict())
    _write_trace(run, ms)
    run.write_json("certificate.json", cert.to_dict())
    return EXIT_OK


def cmd_experiment(run: Run, which: str | None = None) -> int:
    e = run.config.get("experiment", {})
    which = which or e.get("which")
    if which is None:
        raise MixcertError("experiment kind missing: set experiment.which or pass --which")
    s = run.solve_opts()
    restarts = e.get("restarts", s["restarts"])
    kw = {"bound_config": run.bound_config(), "em_config": run.em_config(), "rand_samples": run.certify_opts()["rand_samples"]}
    if which == "tightness":
        gen = run.generator()
        true_pi = None
        if isinstance(gen, MixtureModel):
            idx = [run.cset.find(GaussianComponent(m, c)) for m, c in zip(gen.means, gen.covs)]
            if all(i is not None for i in idx):
                true_pi = WeightVector.from_support(len(run.cset), idx, gen.weights)
        rows = tightness_curve(
            gen, run.cset, run.k, e.get("n_grid", [30, 100, 300]), e.get("seeds", [0]),
            kw["bound_config"], kw["em_config"], restarts, true_pi, kw["rand_samples"], s["refit"],
        )
        p = run.out / "tightness.csv"
        write_curve_csv(rows, p)
        run.add(p)
        errors = [r.error for r in rows if r.error]
        run.write_json("summary.json", {"which": which, "cells": len(rows), "errors": errors, "true_pi_in_set": true_pi is not None})
        return EXIT_OK
    common = dict(
        seed=e.get("seed", 0),
        box=tuple(map(tuple, e.get("box", [[0.0, 0.0], [10.0, 10.0]]))),
        eig_range=tuple(e.get("eig_range", [0.3, 3.0])),
        refit=s["refit"],
        **kw,
    )
    n, inst = e.get("n", 300), e.get("instances", 30)
    if which == "separation":
        rows, bins = separation_sweep(run.cset, run.k, n, inst, e.get("edges", [0.0, 0.5, 1.0, 2.0]), restarts, **common)
        for name, data in (("separation.csv", rows), ("separation_bins.csv", bins)):
            write_rows_csv(data, run.out / name)
            run.add(run.out / name)
        run.write_json("summary.json", {"which": which, "instances": len(rows), "bins": [b.count for b in bins]})
        return EXIT_OK
    rows, rho = restarts_study(run.cset, run.k, n, inst, restarts, **common)
    write_rows_csv(rows, run.out / "restarts_study.csv")
    run.add(run.out / "restarts_study.csv")
    run.write_json("summary.json", {"which": which, "instances": len(rows), "spearman": rho})
    return EXIT_OK


def cmd_segment(run: Run) -> int:
    models = run.config["models"]
    if "patches" not in models:
        raise MixcertError("segment needs a 'patches' model source")
    img_cfg = run.config["data"].get("image")
    if img_cfg is None:
        raise MixcertError("segment needs an image data source")
    p = models["patches"]
    s = run.solve_opts()
    res = segment(
        run.image,
        [tuple(x) for x in p["sizes"]],
        k=int(run.config.get("k", 5)),
        stride=p.get("stride", 1),
        trim_fraction=p.get("trim_fraction", 0.1),
        pixel_cap=img_cfg.get("pixel_cap", DEFAULT_PIXEL_CAP),
        restarts=s["restarts"],
        seed=s["seed"],
        bound_config=run.bound_config(),
        em_config=EmConfig(int(run.config.get("k", 5)), **run.config.get("em", {})),
        rand_samples=run.certify_opts()["rand_samples"],
        memory_budget=run.memory_budget,
        config=run.config,
    )
    mask = run.out / "mask.ppm"
    write_ppm(res.mask_image(), mask)
    run.add(mask)
    run.write_json("bound.json", res.bound.to_dict())
    run.write_json("solution.json", res.solution.to_dict())
    _write_trace(run, res.multistart)
    run.write_json("certificate.json", res.certificate.to_dict())
    return EXIT_OK


COMMANDS = {
    "bound": cmd_bound,
    "solve": cmd_solve,
    "certify": cmd_certify,
    "experiment": cmd_experiment,
    "segment": cmd_segment,
}


def load_config(path) -> dict:
    config = json.loads(Path(path).read_text(encoding="utf-8"))
    jsonschema.validate(config, CONFIG_SCHEMA)
    return config


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mixcert", description="Certified bounds for mixtures over a discrete candidate set.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    ap.add_argument("--out", default=None, help="output directory (overrides output_dir)")
    ap.add_argument("--which", choices=["tightness", "separation", "restarts"], help="experiment kind (experiment only)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config)
        if args.threads:
            kernels.set_threads(args.threads)
        out = Path(args.out or config.get("output_dir", "mixcert-out"))
        out.mkdir(parents=True, exist_ok=True)
        run = Run(config, Path(args.config).resolve().parent, out)
        if args.command == "experiment":
            status = cmd_experiment(run, args.which)
        else:
            status = COMMANDS[args.command](run)
        run.manifest(args.command, status)
        return status
    except jsonschema.ValidationError as exc:
        print(f"mixcert: invalid config: {exc.message}", file=sys.stderr)
    except (MixcertError, ValueError, ArithmeticError, MemoryError, OSError) as exc:
        print(f"mixcert: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
