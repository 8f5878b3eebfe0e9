"""Self-contained demo workspace: scene, synthetic corpus, run script.

The demo room is the 7 x 4.5 x 2.5 m shoebox with a uniform wall
absorption chosen so the Eyring reverberation time is 0.6 s.  Two
sources (one omni, one cardioid aimed at the receiver area) and up to
ten receivers give twenty propagation paths per engine.

The corpus is deliberately synthetic: amplitude-modulated filtered
noise, not speech.  Bundling a speech dataset would drag licensing and
size along; anyone who wants fidelity points the pipeline at a real
corpus directory instead.
"""

from __future__ import annotations

import math
import os
import stat

import numpy as np
from numpy.random import default_rng
from scipy.signal import lfilter

from .dsp import AudioBuffer
from .geometry import (
    N_BANDS,
    Material,
    Receiver,
    RoomScene,
    Source,
    Directivity,
    Vec3,
    eyring_t60,
    save_scene,
    validate_scene,
)
from .rir import write_wav

DEMO_DIMS = Vec3(7.0, 4.5, 2.5)
DEMO_T60_S = 0.6
DEMO_ROOM_ID = "demo_lab"
DEMO_CONDITION_ID = "c0"
MAX_RECEIVERS = 10

_RUN_SCRIPT = """\
#!/bin/sh
# End-to-end demo: simulate with two engines, dereverberate and score,
# then compare the engines' evaluation results against each other.
set -e
cd "$(dirname "$0")"
python3 -m roomsim.cli simulate --config config.json --engine ism
python3 -m roomsim.cli simulate --config config.json --engine rt
python3 -m roomsim.cli evaluate --config config.json --engine ism --out results/ism.csv
python3 -m roomsim.cli evaluate --config config.json --engine rt --out results/rt.csv
python3 -m roomsim.cli compare results/ism.csv results/rt.csv --out report
"""


def demo_absorption(t60_s: float = DEMO_T60_S) -> float:
    """Uniform absorption whose Eyring T60 in the demo room is t60_s."""
    v = DEMO_DIMS.x * DEMO_DIMS.y * DEMO_DIMS.z
    s = 2.0 * (
        DEMO_DIMS.x * DEMO_DIMS.y
        + DEMO_DIMS.x * DEMO_DIMS.z
        + DEMO_DIMS.y * DEMO_DIMS.z
    )
    return 1.0 - math.exp(-0.161 * v / (s * t60_s))


def _receiver_positions() -> list:
    # 5 x 2 grid at seated-ear height, interleaved so truncating to a
    # small n keeps both rows represented
    xs = [3.2 + 0.6 * k for k in range(5)]
    ys = [1.4, 2.6]
    out = []
    for x in xs:
        for y in ys:
            out.append(Vec3(x, y, 1.2))
    return out


def make_demo_scene(n_receivers: int = MAX_RECEIVERS) -> RoomScene:
    """Lab-room stand-in with 2 sources and n_receivers receivers."""
    if not 1 <= n_receivers <= MAX_RECEIVERS:
        raise ValueError(f"n_receivers must be in [1, {MAX_RECEIVERS}]")
    alpha = demo_absorption()
    wall = Material(
        name="demo_wall",
        absorption=(alpha,) * N_BANDS,
        scattering=(0.15,) * N_BANDS,
    )
    positions = _receiver_positions()[:n_receivers]
    receivers = tuple(
        Receiver(id=f"r{i}", position=p) for i, p in enumerate(positions)
    )
    # aim the cardioid at the centroid of the full receiver grid
    s1_pos = Vec3(5.8, 3.4, 1.6)
    target = Vec3(4.4, 2.0, 1.2)
    d = target.distance_to(s1_pos)
    aim = Vec3(
        (target.x - s1_pos.x) / d,
        (target.y - s1_pos.y) / d,
        (target.z - s1_pos.z) / d,
    )
    scene = RoomScene(
        room_id=DEMO_ROOM_ID,
        dims=DEMO_DIMS,
        materials={"demo_wall": wall},
        wall_materials=("demo_wall",) * 6,
        sources=(
            Source(id="s0", position=Vec3(2.0, 3.0, 1.5)),
            Source(
                id="s1",
                position=s1_pos,
                directivity=Directivity(kind="cardioid", orientation=aim),
            ),
        ),
        receivers=receivers,
    )
    validate_scene(scene)
    return scene


def synth_utterance(
    seed: int | list, seconds: float = 2.0, sample_rate: int = 16000
) -> AudioBuffer:
    """Speech-like test signal: AM filtered noise.

    White Gaussian noise is shaped by two cascaded one-pole lowpass
    filters (pole 0.9, a crude voiced-speech spectral tilt), then
    multiplied by a syllabic-rate half-rectified sine envelope (3.1 Hz,
    random phase) over a 0.1 floor, and peak-normalized to 0.5.
    """
    if seconds <= 0:
        raise ValueError("utterance length must be positive")
    rng = default_rng(seed)
    n = int(round(seconds * sample_rate))
    x = rng.standard_normal(n)
    x = lfilter([1.0], [1.0, -0.9], x)
    x = lfilter([1.0], [1.0, -0.9], x)
    t = np.arange(n) / sample_rate
    phase = rng.uniform(0.0, 2.0 * math.pi)
    env = np.clip(np.sin(2.0 * math.pi * 3.1 * t + phase), 0.0, None)
    x = x * (0.1 + env)
    return AudioBuffer(
        samples=0.5 * x / np.abs(x).max(), sample_rate=sample_rate
    )


def make_demo_corpus(
    n_utterances: int,
    seed: int,
    seconds: float = 2.0,
    sample_rate: int = 16000,
) -> list:
    """Distinct deterministic utterances; each gets its own seed stream."""
    if n_utterances < 1:
        raise ValueError("need at least one utterance")
    return [
        synth_utterance([seed, i], seconds, sample_rate)
        for i in range(n_utterances)
    ]


def write_demo_workspace(
    out_dir,
    seed: int = 0,
    n_utterances: int = 20,
    n_receivers: int = MAX_RECEIVERS,
    utterance_seconds: float = 2.0,
) -> dict:
    """Write scene.json, corpus/, config.json, run_demo.sh under out_dir.

    Everything is derived from the arguments, so rerunning with the same
    seed reproduces the workspace byte for byte.  Returns the written
    paths keyed by role.
    """
    from .pipeline import PipelineConfig, save_pipeline_config

    os.makedirs(out_dir, exist_ok=True)
    corpus_dir = os.path.join(out_dir, "corpus")
    os.makedirs(corpus_dir, exist_ok=True)

    scene_path = os.path.join(out_dir, "scene.json")
    save_scene(make_demo_scene(n_receivers), scene_path)

    config = PipelineConfig(
        scene="scene.json",
        engines=("ism", "rt"),
        ism={"max_order": 30, "duration": 0.8},
        rt={"n_rays": 50000, "max_time": 0.8},
        corpus="corpus",
        seed=seed,
        condition_id=DEMO_CONDITION_ID,
    )
    config_path = os.path.join(out_dir, "config.json")
    save_pipeline_config(config, config_path)

    for i, utt in enumerate(
        make_demo_corpus(n_utterances, seed, utterance_seconds)
    ):
        write_wav(
            os.path.join(corpus_dir, f"utt{i:02d}.wav"),
            utt.samples,
            utt.sample_rate,
        )

    script_path = os.path.join(out_dir, "run_demo.sh")
    with open(script_path, "w") as f:
        f.write(_RUN_SCRIPT)
    os.chmod(
        script_path,
        os.stat(script_path).st_mode
        | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH,
    )

    return {
        "scene": scene_path,
        "config": config_path,
        "corpus": corpus_dir,
        "script": script_path,
    }
