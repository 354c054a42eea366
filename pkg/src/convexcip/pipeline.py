"""Stage orchestration with on-disk artifacts and a JSON manifest.

Stages run in the order simulate, propagate, preprocess, invert,
reconstruct.  Each stage hashes its inputs (the resolved configuration plus
the bytes of every input file) and appends a manifest entry.  A stage whose
input hash and output files are unchanged is skipped on rerun.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from . import io, plotting
from .basis import build_basis
from .forward import DielectricField, synthesize_measurements
from .inversion import (
    CWF,
    CarlemanFunctional,
    NonConvergenceError,
    StateVector,
    build_starting_point,
    minimize,
    source_tensors,
)
from .model import RunConfig, dump_config, frequency_from_wavenumber
from .preprocess import preprocess_near_field, subtract_reference
from .propagation import build_cauchy_data, near_field_z_derivative, propagate_to_near_field, rho_lattice
from .reconstruct import extract_inclusion, finalize_field, recover_dielectric

log = logging.getLogger(__name__)

STAGES = ("simulate", "propagate", "preprocess", "invert", "reconstruct")
OMEGA1_DEPTH = 2.0
MANIFEST = "manifest.json"


class PipelineError(RuntimeError):
    pass


class MissingArtifactError(PipelineError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def describe_config(cfg: RunConfig) -> str:
    """All resolved parameters plus the frequency implied by ``k``."""
    ghz = frequency_from_wavenumber(cfg.domain.k) / 1e9
    return dump_config(cfg) + f"\n# implied frequency: {ghz:.2f} GHz\n"


@dataclass
class StageRecord:
    stage: str
    input_hash: str
    outputs: dict
    wall_time: float
    info: dict = field(default_factory=dict)
    cached: bool = False

    def as_dict(self) -> dict:
        return {
            "stage": self.stage,
            "input_hash": self.input_hash,
            "outputs": self.outputs,
            "wall_time": self.wall_time,
            "info": self.info,
        }


class Pipeline:
    """Runs stages inside ``out_dir``.

    Parameters
    ----------
    cfg : RunConfig
    out_dir : path
    reference : path, optional
        Measurement CSV to subtract before propagation; defaults to the
        ``reference.csv`` written by ``simulate`` when present.
    """

    def __init__(self, cfg: RunConfig, out_dir, reference=None):
        self.cfg = cfg
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.reference = Path(reference) if reference else None

    # manifest ---------------------------------------------------------------

    @property
    def manifest_path(self) -> Path:
        return self.out / MANIFEST

    def manifest(self) -> list[dict]:
        if not self.manifest_path.exists():
            return []
        return json.loads(self.manifest_path.read_text(encoding="utf-8"))["entries"]

    def _record(self, rec: StageRecord) -> None:
        entries = [e for e in self.manifest() if e["stage"] != rec.stage]
        entries.append(rec.as_dict())
        entries.sort(key=lambda e: STAGES.index(e["stage"]))
        self.manifest_path.write_text(json.dumps({"entries": entries}, indent=2) + "\n", encoding="utf-8")

    def _input_hash(self, inputs: Iterable[Path]) -> str:
        h = hashlib.sha256(dump_config(self.cfg).encode())
        for p in inputs:
            h.update(p.name.encode())
            h.update(sha256_file(p).encode())
        return h.hexdigest()

    def _cached(self, stage: str, input_hash: str) -> Optional[dict]:
        for e in self.manifest():
            if e["stage"] == stage and e["input_hash"] == input_hash:
                outs = e["outputs"]
                if all((self.out / n).exists() and sha256_file(self.out / n) == hsh for n, hsh in outs.items()):
                    return e
        return None

    # running ------------------------------------------------------------------

    def run(self, stages: Iterable[str] = STAGES, force: bool = False) -> list[StageRecord]:
        stages = list(stages)
        unknown = [s for s in stages if s not in STAGES]
        if unknown:
            raise PipelineError(f"unknown stage(s): {', '.join(unknown)}")
        stages.sort(key=STAGES.index)
        records = []
        for stage in stages:
            inputs = self._inputs(stage)
            ih = self._input_hash(inputs)
            hit = None if force else self._cached(stage, ih)
            if hit is not None:
                log.info("%s: inputs unchanged, reusing artifacts", stage)
                records.append(StageRecord(stage, ih, hit["outputs"], hit["wall_time"], hit["info"], cached=True))
                continue
            t0 = time.perf_counter()
            outputs, info = getattr(self, "_" + stage)(inputs)
            wall = time.perf_counter() - t0
            rec = StageRecord(stage, ih, {p.name: sha256_file(p) for p in outputs}, wall, info)
            self._record(rec)
            log.info("%s: done in %.1f s", stage, wall)
            records.append(rec)
        return records

    def _need(self, name: str, stage: str) -> Path:
        p = self.out / name
        if not p.exists():
            raise MissingArtifactError(f"missing {name}; run {stage}")
        return p

    def _inputs(self, stage: str) -> list[Path]:
        if stage == "simulate":
            return []
        if stage == "propagate":
            meas = self._need("measurements.csv", "simulate")
            ref = self.reference or (self.out / "reference.csv")
            return [meas, ref] if ref.exists() else [meas]
        if stage == "preprocess":
            return [self._need("nearfield.csv", "propagate")]
        if stage == "invert":
            for name in ("cauchy.csv", "cauchy_raw.csv"):
                if (self.out / name).exists():
                    return [self.out / name]
            raise MissingArtifactError("missing CauchyData; run propagate")
        return [self._need("minimizer.vtk", "invert")]

    # stages -------------------------------------------------------------------

    def _simulate(self, inputs):
        cfg, dom = self.cfg, self.cfg.domain
        c = DielectricField.from_inclusions(cfg.sim_grid(), cfg.inclusions)
        lattice = cfg.measurement_lattice()
        rng = np.random.default_rng(cfg.seed)
        meas = synthesize_measurements(c, dom.sources, dom.k, -dom.D, lattice, d=dom.d, noise=cfg.noise, rng=rng)
        ref = synthesize_measurements(DielectricField.background(c.grid), dom.sources, dom.k, -dom.D, lattice, d=dom.d)
        io.save_measurements(meas, self.out / "measurements.csv")
        io.save_measurements(ref, self.out / "reference.csv")
        mid = len(dom.sources) // 2
        fig = plotting.plot_plane(np.abs(meas.samples[mid]), meas.x, meas.y, self.out / "far_field.png",
                                  title=f"far field, alpha = {dom.sources[mid]:.3f}")
        info = {"support_nodes": int(np.count_nonzero(c.values != 1.0)),
                "max_abs_u": float(np.abs(meas.samples).max())}
        return [self.out / "measurements.csv", self.out / "reference.csv", fig], info

    def _propagate(self, inputs):
        cfg, dom = self.cfg, self.cfg.domain
        meas = io.load_measurements(inputs[0], z_plane=-dom.D)
        subtracted = len(inputs) > 1
        if subtracted:
            meas = subtract_reference(meas, io.load_measurements(inputs[1], z_plane=-dom.D))
        g = dom.grid()
        rho = rho_lattice(dom.k, cfg.rho_modes, cfg.rho_step)
        U = propagate_to_near_field(meas, dom.k, dom.b, dom.D, rho, g.x, g.y)
        dU = near_field_z_derivative(meas, dom.k, dom.b, dom.D, rho, g.x, g.y)
        io.save_near_field(meas.alphas, g.x, g.y, U, dU, self.out / "nearfield.csv")
        basis = build_basis(dom.a1, dom.a2, dom.N, cfg.n_quad)
        cauchy = build_cauchy_data(U, dU, basis, dom.k, g.x, g.y, meas.alphas, dom.b, dom.d)
        io.save_cauchy(cauchy, self.out / "cauchy_raw.csv")
        mid = len(meas.alphas) // 2
        fig = plotting.plot_plane(np.abs(U[mid]), g.x, g.y, self.out / "near_field.png",
                                  title=f"propagated, alpha = {meas.alphas[mid]:.3f}")
        info = {"reference_subtracted": subtracted, "max_abs_U": float(np.abs(U).max())}
        return [self.out / "nearfield.csv", self.out / "cauchy_raw.csv", fig], info

    def _preprocess(self, inputs):
        cfg, dom = self.cfg, self.cfg.domain
        alphas, x, y, U, dU = io.load_near_field(inputs[0])
        Up, dUp = preprocess_near_field(U, dU, cfg.kappa1, cfg.sigma)
        basis = build_basis(dom.a1, dom.a2, dom.N, cfg.n_quad)
        cauchy = build_cauchy_data(Up, dUp, basis, dom.k, x, y, alphas, dom.b, dom.d)
        io.save_cauchy(cauchy, self.out / "cauchy.csv")
        mid = len(alphas) // 2
        fig = plotting.plot_plane(np.abs(Up[mid]), x, y, self.out / "preprocessed.png",
                                  title=f"truncated and smoothed, alpha = {alphas[mid]:.3f}")
        return [self.out / "cauchy.csv", fig], {"max_abs_U": float(np.abs(Up).max())}

    def _invert(self, inputs):
        cfg, dom = self.cfg, self.cfg.domain
        cauchy = io.load_cauchy(inputs[0])
        if cauchy.N != dom.N:
            raise PipelineError(f"{inputs[0].name} holds N={cauchy.N} components but the config asks for N={dom.N}")
        g = dom.grid()
        basis = build_basis(dom.a1, dom.a2, dom.N, cfg.n_quad)
        functional = CarlemanFunctional(
            g, basis, source_tensors(g, basis, dom.k, dom.d), cauchy, CWF(dom.lambda_, dom.theta, dom.b),
            neumann_order=cfg.neumann_order, omega1_depth=OMEGA1_DEPTH if cfg.omega1 else None,
        )
        V0 = build_starting_point(cauchy, functional)
        try:
            res = minimize(V0, functional, cfg.gamma0, cfg.max_iter, cfg.tol_gamma, cfg.tol_j)
            state, trace, reason = res.state, res.trace, res.reason
        except NonConvergenceError as exc:
            log.warning("%s; keeping the last accepted iterate", exc)
            state, trace, reason = exc.state, exc.trace, "iteration cap"
        blocks = {}
        for n in range(dom.N):
            blocks[f"v{n}_re"] = state.values[n].real
            blocks[f"v{n}_im"] = state.values[n].imag
        first = blocks.pop("v0_re")
        io.export_scalar_field(first, g, self.out / "minimizer.vtk", name="v0_re", extra=blocks)
        with (self.out / "trace.csv").open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "gamma", "J"])
            for it, gamma, J in trace:
                w.writerow([it, repr(float(gamma)), repr(float(J))])
        fig = plotting.plot_trace(trace, self.out / "trace.png")
        info = {"stop_reason": reason, "iterations": int(trace[-1][0]), "J0": float(trace[0][2]),
                "J": float(trace[-1][2]), "source": inputs[0].name}
        return [self.out / "minimizer.vtk", self.out / "minimizer.vtk.json", self.out / "trace.csv", fig], info

    def _reconstruct(self, inputs):
        cfg, dom = self.cfg, self.cfg.domain
        g, blocks = io.read_scalar_field(inputs[0])
        N = sum(1 for k in blocks if k.endswith("_re"))
        if N != dom.N:
            raise PipelineError(f"minimizer holds N={N} components but the config asks for N={dom.N}")
        V = StateVector(g, np.stack([blocks[f"v{n}_re"] + 1j * blocks[f"v{n}_im"] for n in range(N)]))
        basis = build_basis(dom.a1, dom.a2, dom.N, cfg.n_quad)
        c_raw = recover_dielectric(V, basis, dom.k, dom.d, dom.sources)
        c_comp = finalize_field(c_raw, cfg.smooth_sigma)
        est = extract_inclusion(c_comp, g, cfg.iso_fraction)
        mask = np.zeros(g.shape) if est is None else (c_comp >= est.isovalue)
        io.export_scalar_field(c_comp, g, self.out / "c_comp.vtk", extra={"c_raw": c_raw, "mask": mask},
                               iso_fraction=cfg.iso_fraction)
        summary = {"inclusion": est.as_dict() if est else None,
                   "message": "" if est else "no inclusion found",
                   "max_c_comp": float(c_comp.max()), "max_c_raw": float(c_raw.max())}
        (self.out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
        fig = plotting.plot_field_slices(c_comp, g, self.out / "c_comp.png")
        return [self.out / "c_comp.vtk", self.out / "c_comp.vtk.json", self.out / "summary.json", fig], summary


def run_pipeline(cfg: RunConfig, out_dir, stages: Iterable[str] = STAGES, reference=None,
                 force: bool = False) -> list[StageRecord]:
    return Pipeline(cfg, out_dir, reference).run(stages, force)
