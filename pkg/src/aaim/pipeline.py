"""Run configuration and pipeline orchestration behind the CLI.

A run is described by a JSON config with exactly one data source (a
synthetic scenario or a block-samples file); the pipeline estimates
spectra, builds the requested weightings per frequency bin, produces
third-octave band source maps, DAMAS solutions with discrepancy-chosen
regularization, map metrics and statistical diagnostics, and finishes by
writing a manifest sufficient to reproduce the run.
"""

import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .beamforming import SourceMap, band_average, beamform_map, rms_noise_level, third_octave_edges
from .covariance import (
    CovarianceEstimate,
    gaussian_covariance_estimate,
    gaussian_variance_diagonal,
    nearest_psd_regularized,
    sample_covariance,
    sample_variance_diagonal,
)
from .damas import assemble_system, discrepancy_alpha, nnls_solve
from .diagnostics import compute_map_metrics, compute_stats
from .errors import InconsistentInputsError, InvalidArgumentError, NoBinsInBandError
from .geometry import FlowField, FocusGrid, MicArray, build_focus_grid
from .io import (
    TWO_PI,
    load_array_geometry,
    read_block_samples,
    read_covariance,
    write_block_samples,
    write_covariance,
    write_metric_rows_csv,
    write_source_map_csv,
    write_spectral_matrices,
)
from .spectra import BlockSamples, estimate_csm, estimate_pcsm
from .synth import SynthScenario, synthesize_blocks
from .weighting import Diagonal, ScaledIdentity, SelectionMask, WeightingScheme, build_weighting

WORKERS_ENV = "AAIM_WORKERS"

KNOWN_WEIGHTINGS = ("conventional", "ivd", "ivf", "shading", "rab", "capon")


def builtin_data_path(name: str) -> Path:
    return Path(str(resources.files("aaim").joinpath("data", name)))


def resolve_geometry(spec, workdir: Path) -> MicArray:
    """Geometry from a file path, the builtin name, or an inline position list."""
    if isinstance(spec, (list, tuple)):
        return MicArray(positions=np.asarray(spec, dtype=float))
    if spec == "benchmark64":
        return load_array_geometry(builtin_data_path("benchmark_array_64.txt"))
    path = workdir / spec
    if not path.exists():
        raise InvalidArgumentError(f"geometry file not found: {path}")
    return load_array_geometry(path)


def scenario_from_dict(d: dict, workdir: Path) -> SynthScenario:
    try:
        array = resolve_geometry(d.get("array", "benchmark64"), workdir)
        flow = FlowField(
            speed_of_sound=float(d.get("speed_of_sound", 343.0)),
            mach=np.asarray(d.get("mach", [0.0, 0.0, 0.0]), dtype=float),
        )
        return SynthScenario(
            array=array,
            flow=flow,
            source_position=np.asarray(d["source_position"], dtype=float),
            source_amplitude=float(d["source_amplitude"]),
            noise_amplitude=float(d["noise_amplitude"]),
            block_count=int(d["block_count"]),
            freqs=TWO_PI * np.asarray(d["frequencies_hz"], dtype=float),
            seed=int(d["seed"]),
        )
    except KeyError as exc:
        raise InvalidArgumentError(f"scenario config is missing field {exc}")


def default_scenario_dict() -> dict:
    return json.loads(builtin_data_path("scenario_20db.json").read_text())


@dataclass
class RunConfig:
    """Validated run description; see README for the JSON schema."""

    workdir: Path
    scenario: dict | None = None
    input_blocks: str | None = None
    geometry: object = "benchmark64"
    speed_of_sound: float = 343.0
    mach: tuple = (0.0, 0.0, 0.0)
    grid: dict | None = None
    weightings: tuple = ("conventional", "ivd", "ivf")
    shading_weights: list | None = None
    rab_alpha: float | None = None
    cov_method: str = "gaussian"
    cov_structured: bool = False
    cov_file: str | None = None
    repair_alpha: float | None = None
    mask: object = "diagonal-removal"
    bands_hz: tuple = ()
    damas_enabled: bool = True
    damas_tau: float = 1.5
    damas_alpha: float | None = None
    output_dir: str = "out"
    workers: int | None = None
    figures: bool = True

    @classmethod
    def from_dict(cls, raw: dict, workdir: Path) -> "RunConfig":
        known = {
            "scenario", "input", "geometry", "speed_of_sound", "mach", "grid",
            "weightings", "shading", "rab_alpha", "covariance", "mask",
            "bands_hz", "damas", "output_dir", "workers", "figures",
        }
        unknown = set(raw) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(workdir=workdir)
        cfg.scenario = raw.get("scenario")
        input_section = raw.get("input") or {}
        cfg.input_blocks = input_section.get("blocks")
        if (cfg.scenario is None) == (cfg.input_blocks is None):
            raise InvalidArgumentError("config needs exactly one data source: 'scenario' or 'input.blocks'")
        if cfg.input_blocks is not None and not (workdir / cfg.input_blocks).exists():
            raise InvalidArgumentError(f"blocks file not found: {workdir / cfg.input_blocks}")
        cfg.geometry = raw.get("geometry", (cfg.scenario or {}).get("array", "benchmark64"))
        cfg.speed_of_sound = float(raw.get("speed_of_sound", (cfg.scenario or {}).get("speed_of_sound", 343.0)))
        cfg.mach = tuple(raw.get("mach", (cfg.scenario or {}).get("mach", (0.0, 0.0, 0.0))))
        cfg.grid = raw.get("grid")
        cfg.weightings = tuple(raw.get("weightings", ("conventional", "ivd", "ivf")))
        for w in cfg.weightings:
            if w not in KNOWN_WEIGHTINGS:
                raise InvalidArgumentError(f"unknown weighting '{w}'; choose from {KNOWN_WEIGHTINGS}")
        cfg.shading_weights = raw.get("shading")
        cfg.rab_alpha = raw.get("rab_alpha")
        cov = raw.get("covariance") or {}
        cfg.cov_method = cov.get("method", "gaussian")
        if cfg.cov_method not in ("gaussian", "sample"):
            raise InvalidArgumentError(f"unknown covariance method '{cfg.cov_method}'")
        cfg.cov_structured = bool(cov.get("structured", False))
        cfg.cov_file = cov.get("file")
        cfg.repair_alpha = cov.get("repair_alpha")
        cfg.mask = raw.get("mask", "diagonal-removal")
        cfg.bands_hz = tuple(float(b) for b in raw.get("bands_hz", ()))
        damas = raw.get("damas") or {}
        cfg.damas_enabled = bool(damas.get("enabled", True))
        cfg.damas_tau = float(damas.get("tau", 1.5))
        cfg.damas_alpha = damas.get("alpha")
        cfg.output_dir = raw.get("output_dir", "out")
        cfg.workers = raw.get("workers")
        cfg.figures = bool(raw.get("figures", True))
        if "shading" in cfg.weightings and cfg.shading_weights is None:
            raise InvalidArgumentError("shading weighting requires a 'shading' weight vector")
        if "rab" in cfg.weightings and cfg.rab_alpha is None:
            raise InvalidArgumentError("rab weighting requires 'rab_alpha'")
        return cfg

    @classmethod
    def load(cls, path, workdir: Path | None = None) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise InvalidArgumentError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise InvalidArgumentError(f"config {path} is not valid JSON: {exc}")
        return cls.from_dict(raw, workdir=workdir or path.parent)

    def build_mask(self, num_mics: int) -> SelectionMask:
        if self.mask in (None, "none"):
            return SelectionMask.none(num_mics)
        if self.mask in ("diagonal-removal", "diagonal"):
            return SelectionMask.diagonal_removal(num_mics)
        if isinstance(self.mask, dict) and "pairs" in self.mask:
            return SelectionMask(num_mics, [tuple(p) for p in self.mask["pairs"]])
        raise InvalidArgumentError(f"unknown mask spec {self.mask!r}")

    def build_grid(self) -> FocusGrid:
        g = self.grid or {"origin": [-0.5, -0.5, 0.75], "dx": 0.025, "dy": 0.025, "nx": 41, "ny": 41}
        try:
            return build_focus_grid(g["origin"], float(g["dx"]), float(g["dy"]), int(g["nx"]), int(g["ny"]))
        except KeyError as exc:
            raise InvalidArgumentError(f"grid config is missing field {exc}")

    def worker_count(self) -> int:
        if self.workers is not None:
            return max(1, int(self.workers))
        env = os.environ.get(WORKERS_ENV)
        return max(1, int(env)) if env else 1


def acquire_blocks(config: RunConfig) -> tuple[BlockSamples, MicArray, FlowField]:
    if config.scenario is not None:
        scenario = scenario_from_dict(config.scenario, config.workdir)
        blocks, _ = synthesize_blocks(scenario)
        return blocks, scenario.array, scenario.flow
    blocks = read_block_samples(config.workdir / config.input_blocks)
    array = resolve_geometry(config.geometry, config.workdir)
    if array.num_mics != blocks.num_mics:
        raise InvalidArgumentError(
            f"geometry has {array.num_mics} microphones but blocks carry {blocks.num_mics}"
        )
    flow = FlowField(speed_of_sound=config.speed_of_sound, mach=np.asarray(config.mach, dtype=float))
    return blocks, array, flow


def _weighting_for_bin(
    config: RunConfig,
    name: str,
    blocks: BlockSamples,
    csm_f: np.ndarray,
    pcsm_f: np.ndarray,
    freq_index: int,
    stored: np.ndarray | None = None,
) -> tuple[WeightingScheme, CovarianceEstimate | None]:
    """Build the weighting (and the covariance it derives from, if any)."""
    j = blocks.num_blocks
    if name == "conventional":
        return ScaledIdentity(1.0), None
    if name == "ivd":
        if stored is not None:
            diag = stored[freq_index].diagonal().real
        elif config.cov_method == "gaussian":
            diag = gaussian_variance_diagonal(csm_f, pcsm_f, block_count=j)
        else:
            diag = sample_variance_diagonal(blocks, freq_index)
        return Diagonal(diag, kind="ivd"), None
    if name == "ivf":
        if stored is not None:
            cov = CovarianceEstimate(sigma=stored[freq_index], method=config.cov_method + "-file", block_count=j)
        elif config.cov_method == "gaussian":
            cov = gaussian_covariance_estimate(csm_f, pcsm_f, block_count=j)
        else:
            cov = sample_covariance_single(blocks, freq_index)
        if config.repair_alpha is not None:
            cov = nearest_psd_regularized(cov, float(config.repair_alpha))
        return build_weighting("ivf", cov=cov, structured=config.cov_structured), cov
    if name == "shading":
        return build_weighting("shading", shading=np.asarray(config.shading_weights, dtype=float)), None
    if name == "rab":
        return build_weighting("rab", csm=csm_f, alpha=float(config.rab_alpha)), None
    if name == "capon":
        return build_weighting("capon", csm=csm_f), None
    raise InvalidArgumentError(f"unknown weighting '{name}'")


def sample_covariance_single(blocks: BlockSamples, freq_index: int) -> CovarianceEstimate:
    """Sample covariance estimate at one frequency bin."""
    single = BlockSamples(
        freqs=blocks.freqs[freq_index : freq_index + 1],
        data=blocks.data[:, :, freq_index : freq_index + 1],
    )
    return sample_covariance(single)[0]


def _covariance_for_variance(
    config: RunConfig,
    blocks: BlockSamples,
    csm_f: np.ndarray,
    pcsm_f: np.ndarray,
    freq_index: int,
    stored: np.ndarray | None = None,
) -> CovarianceEstimate:
    """Data covariance used for rms noise levels, independent of the weighting."""
    if stored is not None:
        return CovarianceEstimate(
            sigma=stored[freq_index], method=config.cov_method + "-file", block_count=blocks.num_blocks
        )
    if config.cov_method == "gaussian":
        return gaussian_covariance_estimate(csm_f, pcsm_f, block_count=blocks.num_blocks)
    return sample_covariance_single(blocks, freq_index)


def run_pipeline(config: RunConfig) -> dict:
    """Execute all stages; returns the manifest dictionary (also written to disk)."""
    out_dir = config.workdir / config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "tool": "aaim",
        "version": __version__,
        "config": _config_echo(config),
        "timings_s": {},
        "bands": [],
        "warnings": [],
    }
    timings = manifest["timings_s"]

    t0 = time.perf_counter()
    blocks, array, flow = acquire_blocks(config)
    if config.scenario is not None:
        write_block_samples(out_dir / "blocks.aaim", blocks)
    stored = None
    if config.cov_file is not None:
        cov_freqs, stored, _ = read_covariance(config.workdir / config.cov_file)
        if stored.shape[1] != array.num_mics**2:
            raise InconsistentInputsError(
                f"covariance file dimension {stored.shape[1]} does not match M^2 = {array.num_mics**2}"
            )
        if stored.shape[0] != blocks.num_freqs or not np.allclose(cov_freqs, blocks.freqs):
            raise InconsistentInputsError("covariance file frequencies do not match the block data")
    timings["acquire"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    csm = estimate_csm(blocks)
    pcsm = estimate_pcsm(blocks)
    write_spectral_matrices(out_dir / "csm.aaim", blocks.freqs, csm)
    write_spectral_matrices(out_dir / "pcsm.aaim", blocks.freqs, pcsm)
    timings["spectra"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    stats = compute_stats(blocks)
    stats_rows = []
    for f, freq in enumerate(stats.freqs):
        stats_rows.append((freq, "eps_mean", float(stats.eps_mean[f]), ""))
        stats_rows.append((freq, "ad_acceptance_rate", float(stats.ad_acceptance_rate[f]), ""))
        stats_rows.append((freq, "proper_ratio", float(stats.proper_ratio[f]), ""))
        stats_rows.append((freq, "white_noise_dev", float(stats.white_noise_dev[f]), ""))
    write_metric_rows_csv(out_dir / "stats.csv", stats_rows)
    if config.figures:
        from .plots import save_stats_figure

        save_stats_figure(stats, out_dir / "stats.png")
    timings["stats"] = time.perf_counter() - t0

    grid = config.build_grid()
    mask = config.build_mask(array.num_mics)
    metric_rows = []
    band_metric_curves: dict[str, dict[str, list]] = {}

    for band_hz in config.bands_hz:
        band_entry = _run_band(
            config, band_hz, blocks, array, flow, grid, mask, csm, pcsm, out_dir, metric_rows,
            manifest["warnings"], stored,
        )
        manifest["bands"].append(band_entry)
        for weighting, metrics in band_entry["beamform_metrics"].items():
            for metric_name in ("resolution", "snr_db", "spr_db"):
                band_metric_curves.setdefault(metric_name, {}).setdefault(weighting, []).append(
                    (band_hz, metrics[metric_name])
                )

    if metric_rows:
        write_metric_rows_csv(out_dir / "metrics.csv", metric_rows)
        if config.figures and band_metric_curves:
            from .plots import save_metric_curves_figure

            for metric_name, per_weighting in band_metric_curves.items():
                curves = {
                    w: (TWO_PI * np.array([p[0] for p in pts]), [p[1] for p in pts])
                    for w, pts in per_weighting.items()
                }
                save_metric_curves_figure(
                    curves, out_dir / f"metric_{metric_name}.png", ylabel=metric_name
                )

    _write_manifest(out_dir / "manifest.json", manifest)
    return manifest


def _run_band(
    config, band_hz, blocks, array, flow, grid, mask, csm, pcsm, out_dir, metric_rows, warnings, stored=None
) -> dict:
    center_omega = TWO_PI * band_hz
    lo, hi = third_octave_edges(center_omega)
    in_band = np.flatnonzero((blocks.freqs >= lo) & (blocks.freqs <= hi))
    if in_band.size == 0:
        nearest = blocks.freqs[np.argsort(np.abs(blocks.freqs - center_omega))[:3]] / TWO_PI
        raise NoBinsInBandError(
            f"band {band_hz:.0f} Hz contains no FFT bins; nearest bins at "
            + ", ".join(f"{v:.1f} Hz" for v in nearest)
        )
    center_bin = int(in_band[np.argmin(np.abs(blocks.freqs[in_band] - center_omega))])
    entry: dict = {
        "band_hz": band_hz,
        "bins_hz": [float(blocks.freqs[f] / TWO_PI) for f in in_band],
        "center_bin_hz": float(blocks.freqs[center_bin] / TWO_PI),
        "beamform_metrics": {},
        "damas": {},
    }
    workers = config.worker_count()

    for name in config.weightings:
        t0 = time.perf_counter()

        def bin_map(f: int) -> SourceMap:
            w, _ = _weighting_for_bin(config, name, blocks, csm[f], pcsm[f], f, stored)
            return beamform_map(
                csm[f], w, mask, grid, array, blocks.freqs[f], flow, block_count=blocks.num_blocks
            )

        if workers > 1 and in_band.size > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                maps = list(pool.map(bin_map, in_band))
        else:
            maps = [bin_map(f) for f in in_band]
        band_map = band_average(maps, center_omega)

        tag = f"{int(round(band_hz))}hz_{name}"
        write_source_map_csv(out_dir / f"map_{tag}.csv", band_map)
        if config.figures:
            from .plots import save_map_figure

            save_map_figure(band_map, out_dir / f"map_{tag}.png")

        metrics = compute_map_metrics(band_map)
        entry["beamform_metrics"][name] = {
            "resolution": metrics.resolution,
            "resolution_component": metrics.resolution_component,
            "snr_db": metrics.snr_db,
            "snr_no_sidelobe": metrics.snr_no_sidelobe,
            "spr_db": metrics.spr_db,
        }
        flags = "no_sidelobe" if metrics.snr_no_sidelobe else ""
        metric_rows.append((center_omega, f"beamform_resolution_{name}", metrics.resolution, ""))
        metric_rows.append((center_omega, f"beamform_snr_{name}", metrics.snr_db, flags))
        metric_rows.append((center_omega, f"beamform_spr_{name}", metrics.spr_db, ""))

        if config.damas_enabled:
            damas_entry = _run_damas(
                config, name, blocks, array, flow, grid, mask, csm, pcsm, center_bin, band_map, out_dir, tag,
                metric_rows, warnings, center_omega, stored,
            )
            entry["damas"][name] = damas_entry
        entry["beamform_metrics"][name]["time_s"] = time.perf_counter() - t0
    return entry


def _run_damas(
    config, name, blocks, array, flow, grid, mask, csm, pcsm, center_bin, band_map, out_dir, tag,
    metric_rows, warnings, center_omega, stored=None,
) -> dict:
    omega_c = float(blocks.freqs[center_bin])
    w, _ = _weighting_for_bin(config, name, blocks, csm[center_bin], pcsm[center_bin], center_bin, stored)
    system = assemble_system(w, mask, grid, band_map, array, omega_c, flow)

    cov = _covariance_for_variance(config, blocks, csm[center_bin], pcsm[center_bin], center_bin, stored)
    delta = rms_noise_level(w, cov, mask, grid, array, omega_c, flow)

    if config.damas_alpha is not None:
        alpha, flag = float(config.damas_alpha), "fixed"
        solution = nnls_solve(system.h, system.b, alpha)
    else:
        chosen = discrepancy_alpha(system.h, system.b, delta, tau=config.damas_tau)
        alpha, flag = chosen.alpha, chosen.flag
        if flag != "ok":
            warnings.append(f"band {tag}: discrepancy principle hit bracket ({flag})")
        solution = nnls_solve(system.h, system.b, alpha)

    damas_map = SourceMap(
        grid=grid,
        values=solution.q.astype(np.complex128),
        weighting=band_map.weighting,
        mask=band_map.mask,
        frequency=band_map.frequency,
        band_edges=band_map.band_edges,
        block_count=band_map.block_count,
    )
    write_source_map_csv(out_dir / f"damas_{tag}.csv", band_map, q=solution.q)
    if config.figures:
        from .plots import save_map_figure

        save_map_figure(damas_map, out_dir / f"damas_{tag}.png", powers=solution.q)

    try:
        metrics = compute_map_metrics(damas_map)
        metric_rows.append((center_omega, f"damas_resolution_{name}", metrics.resolution, ""))
        metric_rows.append((center_omega, f"damas_snr_{name}", metrics.snr_db, "no_sidelobe" if metrics.snr_no_sidelobe else ""))
        metric_rows.append((center_omega, f"damas_spr_{name}", metrics.spr_db, ""))
        damas_metrics = {"resolution": metrics.resolution, "snr_db": metrics.snr_db, "spr_db": metrics.spr_db}
    except Exception:  # all-zero q maps leave the metrics undefined
        damas_metrics = None
        warnings.append(f"band {tag}: DAMAS map metrics undefined")

    return {
        "alpha": alpha,
        "alpha_flag": flag,
        "delta_rms": delta,
        "residual_norm": solution.residual_norm,
        "kkt_residual": solution.kkt_residual,
        "metrics": damas_metrics,
    }


def run_synth(config_path, out_path, workdir: Path | None = None) -> None:
    """Synthesize a scenario config (or the scenario inside a run config)."""
    path = Path(config_path)
    if not path.exists():
        raise InvalidArgumentError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"config {path} is not valid JSON: {exc}")
    scenario_dict = raw.get("scenario", raw)
    scenario = scenario_from_dict(scenario_dict, workdir or path.parent)
    blocks, _ = synthesize_blocks(scenario)
    write_block_samples(out_path, blocks)


def run_csm(blocks_path, out_csm, out_pcsm) -> None:
    blocks = read_block_samples(blocks_path)
    write_spectral_matrices(out_csm, blocks.freqs, estimate_csm(blocks))
    if out_pcsm is not None:
        write_spectral_matrices(out_pcsm, blocks.freqs, estimate_pcsm(blocks))


def run_cov(blocks_path, out_path, method: str, repair_alpha: float | None = None) -> None:
    blocks = read_block_samples(blocks_path)
    if method == "gaussian":
        csm = estimate_csm(blocks)
        pcsm = estimate_pcsm(blocks)
        estimates = [
            gaussian_covariance_estimate(csm[f], pcsm[f], block_count=blocks.num_blocks)
            for f in range(blocks.num_freqs)
        ]
    elif method == "sample":
        estimates = sample_covariance(blocks)
    else:
        raise InvalidArgumentError(f"unknown covariance method '{method}'")
    if repair_alpha is not None:
        estimates = [nearest_psd_regularized(e, float(repair_alpha)) for e in estimates]
    sigmas = np.stack([e.sigma for e in estimates])
    write_covariance(out_path, blocks.freqs, sigmas, method={"gaussian": "gaussian-formula", "sample": "sample"}[method])


def run_stats(blocks_path, out_csv, out_fig=None) -> None:
    blocks = read_block_samples(blocks_path)
    stats = compute_stats(blocks)
    rows = []
    for f, freq in enumerate(stats.freqs):
        rows.append((freq, "eps_mean", float(stats.eps_mean[f]), ""))
        rows.append((freq, "ad_acceptance_rate", float(stats.ad_acceptance_rate[f]), ""))
        rows.append((freq, "proper_ratio", float(stats.proper_ratio[f]), ""))
        rows.append((freq, "white_noise_dev", float(stats.white_noise_dev[f]), ""))
    write_metric_rows_csv(out_csv, rows)
    if out_fig is not None:
        from .plots import save_stats_figure

        save_stats_figure(stats, out_fig)


def _config_echo(config: RunConfig) -> dict:
    echo = {}
    for key, value in vars(config).items():
        if key == "workdir":
            echo[key] = str(value)
        elif isinstance(value, tuple):
            echo[key] = list(value)
        else:
            echo[key] = value
    return echo


def _write_manifest(path: Path, manifest: dict) -> None:
    tmp = path.with_suffix(".json.tmp")
    tmp.write_text(json.dumps(manifest, indent=2, default=float) + "\n")
    os.replace(tmp, path)
