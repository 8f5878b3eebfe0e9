"""File-level pipeline orchestration behind the command line.

Each cmd_* function does a whole unit of work (simulate a scene with
one engine, evaluate a manifest, compare result stores) reading and
writing only files, so commands compose without hidden state and a
rerun with identical inputs reproduces identical bytes.  The CLI layer
is a thin argv/exit-code wrapper over these.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

from . import metrics as metrics_mod
from .agreement import (
    build_report,
    render_scatter_svg,
    report_from_dict,
    report_to_dict,
    report_to_text,
    scatter_to_csv,
)
from .dsp import AudioBuffer, fft_convolve, lowpass, resample
from .errors import DegenerateDataError
from .fdtd import FdtdConfig, render_rir_fdtd
from .geometry import (
    RoomScene,
    load_scene,
    make_receiver_grid,
    validate_scene,
)
from .ism import IsmConfig, render_rir_ism
from .manifest import (
    DatasetManifest,
    ManifestEntry,
    load_manifest,
    save_manifest,
)
from .raytrace import RtConfig, render_rir_rt
from .results import load_results, save_results, sort_results
from .rir import Rir, config_hash, load_rir, read_wav, save_rir, write_wav
from .version import __version__
from .wpe import (
    WpeConfig,
    build_eval_groups,
    group_mixture,
    run_dereverb_eval,
    wpe_dereverb,
)

ENGINES = ("ism", "rt", "fdtd")
MANIFEST_NAME = "manifest.json"


class MissingInputError(FileNotFoundError):
    """A required input file or directory does not exist.

    ``kind`` feeds the CLI's machine-readable error JSON.
    """

    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one run needs, JSON-serializable.

    Relative paths (scene, corpus) resolve against the directory of the
    config file they came from, so a workspace stays self-contained.
    Engine dicts override the corresponding engine config defaults.
    """

    scene: str = "scene.json"
    engines: tuple = ("ism", "rt")
    ism: dict = field(default_factory=dict)
    rt: dict = field(default_factory=dict)
    fdtd: dict = field(default_factory=dict)
    corpus: str = "corpus"
    seed: int = 0
    metrics: tuple = ("estoi", "si_sdr")
    band_limit_cap_hz: float = 7000.0
    target_rate_hz: int = 16000
    n_support: int = 5
    condition_id: str = "c0"

    def __post_init__(self):
        object.__setattr__(self, "engines", tuple(self.engines))
        object.__setattr__(self, "metrics", tuple(self.metrics))
        if self.target_rate_hz <= 0:
            raise ValueError("target rate must be positive")
        if not 0.0 < self.band_limit_cap_hz <= self.target_rate_hz / 2.0:
            raise ValueError(
                "band-limit cap must lie in (0, target Nyquist]"
            )
        for e in self.engines:
            if e not in ENGINES:
                raise ValueError(f"unknown engine {e!r}")


def pipeline_config_from_dict(data: dict) -> PipelineConfig:
    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"unknown config fields {unknown}")
    return PipelineConfig(**data)


def load_pipeline_config(path) -> PipelineConfig:
    if not os.path.exists(path):
        raise MissingInputError("config_not_found", f"no config file {path}")
    with open(path) as f:
        return pipeline_config_from_dict(json.load(f))


def save_pipeline_config(config: PipelineConfig, path) -> None:
    data = dataclasses.asdict(config)
    data["engines"] = list(config.engines)
    data["metrics"] = list(config.metrics)
    with open(path, "w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# simulate


def _load_scene_checked(config: PipelineConfig, base: str) -> RoomScene:
    path = os.path.join(base, config.scene)
    if not os.path.exists(path):
        raise MissingInputError("scene_not_found", f"no scene file {path}")
    scene = load_scene(path)
    validate_scene(scene)
    return scene


def _render_one(
    scene: RoomScene,
    source_id: str,
    receiver_id: str,
    engine: str,
    config: PipelineConfig,
    path_seed: int,
) -> Rir:
    target = config.target_rate_hz
    if engine == "ism":
        return render_rir_ism(
            scene, source_id, receiver_id,
            IsmConfig(sample_rate=target, **config.ism),
        )
    if engine == "rt":
        rt_kwargs = dict(config.rt)
        rt_kwargs.setdefault("seed", path_seed)
        return render_rir_rt(
            scene, source_id, receiver_id, RtConfig(**rt_kwargs),
            sample_rate=target,
        )
    if engine == "fdtd":
        missing = [k for k in ("dx", "duration") if k not in config.fdtd]
        if missing:
            raise ValueError(
                f"fdtd engine config needs {missing} (no safe defaults)"
            )
        return render_rir_fdtd(
            scene, source_id, receiver_id, FdtdConfig(**config.fdtd),
            sample_rate=target, band_cap=config.band_limit_cap_hz,
        )
    raise ValueError(f"unknown engine {engine!r}")


def cmd_simulate(
    config: PipelineConfig, engine: str, base: str, out_dir: str | None = None
) -> dict:
    """One RIR per (source, receiver); manifest updated in place.

    Every RIR is band-limited to the configured cap (or the engine's
    usable bandwidth if lower) and resampled to the target rate before
    storage, so stores from different engines are directly comparable.
    Rerunning replaces this engine's entries deterministically.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}")
    scene = _load_scene_checked(config, base)
    out_base = out_dir if out_dir is not None else base
    rir_dir = os.path.join(out_base, "rirs", engine)
    os.makedirs(rir_dir, exist_ok=True)

    cap = config.band_limit_cap_hz
    target = config.target_rate_hz
    warnings = []
    entries = []
    pairs = [
        (s, r) for s in scene.sources for r in scene.receivers
    ]
    for i, (src, rcv) in enumerate(pairs):
        r = _render_one(
            scene, src.id, rcv.id, engine, config, config.seed + i
        )
        recorded = cap if r.band_limit_hz is None else min(
            cap, float(r.band_limit_hz)
        )
        if recorded < cap:
            warnings.append(
                f"{engine} {src.id}->{rcv.id}: usable bandwidth "
                f"{recorded:g} Hz below cap {cap:g} Hz; recording "
                f"{recorded:g}"
            )
        samples = lowpass(r.samples, r.sample_rate, recorded)
        if r.sample_rate != target:
            samples = resample(samples, r.sample_rate, target)
        rel_path = os.path.join("rirs", engine, f"{src.id}_{rcv.id}.wav")
        provenance = dict(r.provenance or {})
        provenance.update(
            {
                "config_hash": config_hash(
                    {
                        "engine": engine,
                        "engine_config": getattr(config, engine),
                        "cap_hz": cap,
                        "target_rate_hz": target,
                        "seed": config.seed,
                    }
                ),
                "seed": config.seed,
                "tool_version": __version__,
            }
        )
        save_rir(
            Rir(
                samples=samples,
                sample_rate=target,
                engine=engine,
                band_limit_hz=recorded,
                provenance=provenance,
            ),
            os.path.join(out_base, rel_path),
        )
        entries.append(
            ManifestEntry(
                rir_path=rel_path,
                engine=engine,
                room_id=scene.room_id,
                condition_id=config.condition_id,
                source_id=src.id,
                receiver_id=rcv.id,
                source_pos=src.position,
                receiver_pos=rcv.position,
                true_distance=src.position.distance_to(rcv.position),
            )
        )

    manifest_path = os.path.join(out_base, MANIFEST_NAME)
    if os.path.exists(manifest_path):
        kept = [
            e
            for e in load_manifest(manifest_path).entries
            if e.engine != engine
        ]
    else:
        kept = []
    save_manifest(
        DatasetManifest(entries=tuple(kept) + tuple(entries)), manifest_path
    )
    return {
        "engine": engine,
        "n_rirs": len(entries),
        "manifest": manifest_path,
        "warnings": warnings,
    }


# ---------------------------------------------------------------------------
# corpus + evaluate


def load_corpus(config: PipelineConfig, base: str) -> list:
    """Sorted WAVs from the corpus directory as AudioBuffers."""
    corpus_dir = os.path.join(base, config.corpus)
    if not os.path.isdir(corpus_dir):
        raise MissingInputError(
            "corpus_not_found", f"no corpus directory {corpus_dir}"
        )
    names = sorted(
        n for n in os.listdir(corpus_dir) if n.lower().endswith(".wav")
    )
    if not names:
        raise MissingInputError(
            "corpus_not_found", f"no WAV files in {corpus_dir}"
        )
    out = []
    for name in names:
        rate, samples = read_wav(os.path.join(corpus_dir, name))
        if samples.ndim == 2:
            samples = samples[0]
        out.append(AudioBuffer(samples=samples, sample_rate=rate))
    return out


def _manifest_checked(base: str) -> DatasetManifest:
    path = os.path.join(base, MANIFEST_NAME)
    if not os.path.exists(path):
        raise MissingInputError(
            "manifest_not_found", f"no manifest {path}; run simulate first"
        )
    return load_manifest(path)


def cmd_evaluate(
    config: PipelineConfig,
    base: str,
    out_csv: str,
    engine: str | None = None,
    include_unprocessed: bool = False,
    self_check: bool = False,
    external: str | None = None,
    external_metric: str | None = None,
) -> dict:
    """Dereverberation scoring and/or external-score ingestion to CSV."""
    manifest = _manifest_checked(base)
    rows = []
    if external is None or external_metric is None:
        corpus = load_corpus(config, base)
        engines = [engine] if engine else manifest.engines()
        for eng in engines:
            sub = manifest.filter(engine=eng)
            if not len(sub):
                raise DegenerateDataError(
                    f"manifest has no entries for engine {eng!r}"
                )
            rows.extend(
                run_dereverb_eval(
                    sub,
                    corpus,
                    WpeConfig(),
                    n_support=config.n_support,
                    seed=config.seed,
                    metrics_list=config.metrics,
                    base_dir=base,
                    condition_id=config.condition_id,
                    include_unprocessed=include_unprocessed,
                    self_check=self_check,
                )
            )
    if external is not None:
        if external_metric is None:
            raise ValueError("external scores need --metric")
        if not os.path.exists(external):
            raise MissingInputError(
                "external_scores_not_found", f"no score file {external}"
            )
        rows.extend(
            metrics_mod.ingest_external_scores(
                external, external_metric, manifest
            )
        )
    rows = sort_results(rows)
    parent = os.path.dirname(out_csv)
    if parent:
        os.makedirs(parent, exist_ok=True)
    save_results(rows, out_csv)
    return {"n_rows": len(rows), "path": out_csv}


def cmd_convolve(
    config: PipelineConfig,
    base: str,
    out_dir: str,
    engine: str | None = None,
) -> dict:
    """Wet audio per manifest entry, for listening or external scoring.

    Utterances rotate through the corpus in manifest order with the
    same seed rotation the evaluator uses.
    """
    manifest = _manifest_checked(base)
    if engine:
        manifest = manifest.filter(engine=engine)
    if not len(manifest):
        raise DegenerateDataError("no manifest entries to convolve")
    corpus = load_corpus(config, base)
    rotation = config.seed % len(corpus)
    written = []
    for i, e in enumerate(manifest.entries):
        utt = corpus[(i + rotation) % len(corpus)]
        r = load_rir(os.path.join(base, e.rir_path))
        if r.sample_rate != utt.sample_rate:
            raise ValueError(
                f"RIR rate {r.sample_rate} != corpus rate {utt.sample_rate}"
            )
        wet = fft_convolve(utt.samples, r.samples)
        path = os.path.join(
            out_dir,
            "wet",
            e.engine,
            f"{e.room_id}_{e.condition_id}_{e.source_id}_{e.receiver_id}.wav",
        )
        os.makedirs(os.path.dirname(path), exist_ok=True)
        write_wav(path, wet, utt.sample_rate)
        written.append(path)
    return {"n_files": len(written), "paths": written}


def cmd_dereverb(
    config: PipelineConfig,
    base: str,
    out_dir: str,
    engine: str | None = None,
) -> dict:
    """WPE-processed audio per evaluation group, without scoring."""
    manifest = _manifest_checked(base)
    corpus = load_corpus(config, base)
    engines = [engine] if engine else manifest.engines()
    written = []
    for eng in engines:
        sub = manifest.filter(engine=eng)
        if not len(sub):
            raise DegenerateDataError(
                f"manifest has no entries for engine {eng!r}"
            )
        groups = build_eval_groups(
            sub,
            n_support=config.n_support,
            seed=config.seed,
            condition_id=config.condition_id,
        )
        rotation = config.seed % len(corpus)
        for gi, group in enumerate(groups):
            utt = corpus[(gi + rotation) % len(corpus)]
            mixture, _ = group_mixture(group, utt, base)
            out = wpe_dereverb(mixture, utt.sample_rate, WpeConfig())
            m = group.main
            path = os.path.join(
                out_dir,
                "processed",
                eng,
                f"{m.room_id}_{m.condition_id}_{m.source_id}"
                f"_{m.receiver_id}.wav",
            )
            os.makedirs(os.path.dirname(path), exist_ok=True)
            write_wav(path, out.samples, out.sample_rate)
            written.append(path)
    return {"n_files": len(written), "paths": written}


# ---------------------------------------------------------------------------
# compare + report


def cmd_compare(
    reference_csv: str,
    candidate_csvs: list,
    out_dir: str,
    pool: bool = True,
    svg: bool = False,
) -> dict:
    """Agreement report + scatter exports for candidate stores."""
    if not os.path.exists(reference_csv):
        raise MissingInputError(
            "results_not_found", f"no reference results {reference_csv}"
        )
    for c in candidate_csvs:
        if not os.path.exists(c):
            raise MissingInputError(
                "results_not_found", f"no candidate results {c}"
            )
    reference = load_results(reference_csv)
    candidates = [load_results(c) for c in candidate_csvs]
    report = build_report(reference, candidates, pool=pool)

    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "report.json")
    with open(json_path, "w") as f:
        json.dump(report_to_dict(report), f, indent=2, sort_keys=True)
        f.write("\n")
    text = report_to_text(report)
    text_path = os.path.join(out_dir, "report.txt")
    with open(text_path, "w") as f:
        f.write(text + "\n")

    scatter_paths = []
    for key in sorted(report.scatter):
        engine, algorithm, metric, dataset = key
        points = report.scatter[key]
        if not points:
            continue
        stem = f"scatter_{engine}_{algorithm}_{metric}_{dataset}"
        csv_path = os.path.join(out_dir, stem + ".csv")
        with open(csv_path, "w") as f:
            f.write(scatter_to_csv(points))
        scatter_paths.append(csv_path)
        if svg:
            svg_path = os.path.join(out_dir, stem + ".svg")
            with open(svg_path, "w") as f:
                f.write(render_scatter_svg(points, title=stem))
            scatter_paths.append(svg_path)

    return {
        "report_json": json_path,
        "report_txt": text_path,
        "scatter": scatter_paths,
        "text": text,
        "n_rows": len(report.rows),
    }


def cmd_report(report_json: str) -> str:
    """Render a stored report JSON back to its text table."""
    if not os.path.exists(report_json):
        raise MissingInputError(
            "report_not_found", f"no report file {report_json}"
        )
    with open(report_json) as f:
        data = json.load(f)
    return report_to_text(report_from_dict(data))


def cmd_grid(
    scene_path: str, spacing: float, height: float
) -> dict:
    """Receiver grid positions for a scene's floor plan."""
    if not os.path.exists(scene_path):
        raise MissingInputError(
            "scene_not_found", f"no scene file {scene_path}"
        )
    scene = load_scene(scene_path)
    positions = make_receiver_grid(scene.dims, spacing, height)
    return {
        "room_id": scene.room_id,
        "spacing": spacing,
        "height": height,
        "n": len(positions),
        "positions": [[p.x, p.y, p.z] for p in positions],
    }
