"""Stochastic ray engine: geometry weights, conservation, determinism."""

import math

import numpy as np
import pytest

from conftest import make_lab_scene

from roomsim import dsp
from roomsim.errors import EngineError
from roomsim.geometry import Box, Directivity, Source, Vec3, eyring_t60
from roomsim.kernels import backend
from roomsim.raytrace import (
    Echogram,
    RtConfig,
    echogram_t60,
    echogram_to_rir,
    rain_weight,
    receiver_solid_angle,
    render_rir_rt,
    trace,
)

# default lab scene: source (2,3,1.5), receiver (3,1,1) -> d^2 = 5.25
LAB_DIST = math.sqrt(5.25)
# capture fraction of an omni source by a 0.25 m sphere at that distance,
# (1 - sqrt(1 - (rho/d)^2)) / 2, worked out by hand
LAB_DIRECT_ENERGY = 0.0029851013059975506


class TestReceiverSolidAngle:
    def test_matches_cap_formula(self):
        # sphere of radius 0.5 seen from 2 m
        want = 2.0 * math.pi * (1.0 - math.sqrt(1.0 - 0.0625))
        assert receiver_solid_angle(2.0, 0.5) == pytest.approx(want, rel=1e-12)

    def test_inside_sphere_sees_full_sphere(self):
        assert receiver_solid_angle(0.1, 0.25) == pytest.approx(4.0 * math.pi)
        assert receiver_solid_angle(0.25, 0.25) == pytest.approx(4.0 * math.pi)

    def test_far_field_inverse_square(self):
        near = receiver_solid_angle(10.0, 0.1)
        far = receiver_solid_angle(20.0, 0.1)
        assert near / far == pytest.approx(4.0, rel=1e-3)


class TestRainWeight:
    def test_grazing_and_back_incidence_zero(self):
        assert rain_weight(2.0, 0.0, 0.25) == 0.0
        assert rain_weight(2.0, -0.7, 0.25) == 0.0

    def test_linear_in_cosine(self):
        full = rain_weight(3.0, 1.0, 0.25)
        half = rain_weight(3.0, 0.5, 0.25)
        assert half == pytest.approx(0.5 * full, rel=1e-12)

    def test_clamped_to_one(self):
        # receiver sphere nearly engulfs the hit point
        assert rain_weight(0.2501, 1.0, 0.25) == 1.0


class TestRtConfig:
    def test_rejects_bad_values(self):
        with pytest.raises(ValueError):
            RtConfig(n_rays=0)
        with pytest.raises(ValueError):
            RtConfig(bin_width=0.0)
        with pytest.raises(ValueError):
            RtConfig(max_time=-1.0)
        with pytest.raises(ValueError):
            RtConfig(receiver_radius=0.0)

    def test_bin_count_covers_max_time(self):
        cfg = RtConfig(max_time=0.5005, bin_width=1e-3)
        assert cfg.n_bins == 501


class TestTraceBasics:
    def test_one_echogram_per_receiver(self):
        from roomsim.geometry import Receiver

        scene = make_lab_scene(
            alpha=0.3,
            scattering=0.5,
            receivers=(
                Receiver("a", Vec3(3.0, 1.0, 1.0)),
                Receiver("b", Vec3(5.0, 3.5, 1.2)),
            ),
        )
        cfg = RtConfig(n_rays=500, max_time=0.2, seed=1)
        echs = trace(scene, "src0", cfg)
        assert [e.receiver_id for e in echs] == ["a", "b"]
        for e in echs:
            assert e.bins.shape == (dsp.N_BANDS, cfg.n_bins)
            assert (e.bins >= 0).all()

    def test_total_absorption_leaves_only_direct(self):
        scene = make_lab_scene(alpha=1.0)
        cfg = RtConfig(n_rays=1000, max_time=0.3, seed=7)
        ech = trace(scene, "src0", cfg)[0]
        kdir = int(ech.direct_time / cfg.bin_width)
        nz = np.nonzero(ech.bins.sum(axis=0))[0]
        assert list(nz) == [kdir]
        assert ech.stats["deposited"] == 0.0
        assert ech.stats["absorbed"] == pytest.approx(ech.stats["emitted"])

    def test_direct_path_against_closed_form(self):
        scene = make_lab_scene(alpha=0.3, scattering=0.5)
        ech = trace(scene, "src0", RtConfig(n_rays=16, max_time=0.1, seed=0))[0]
        assert ech.direct_time == pytest.approx(LAB_DIST / 343.0, rel=1e-12)
        np.testing.assert_allclose(
            ech.direct_energy, LAB_DIRECT_ENERGY, rtol=1e-12
        )

    def test_energy_books_balance(self):
        scene = make_lab_scene(alpha=0.3, scattering=0.5)
        ech = trace(scene, "src0", RtConfig(n_rays=4000, max_time=0.4, seed=11))[0]
        st = ech.stats
        gap = st["emitted"] - st["absorbed"] - st["deposited"] - st["truncated"]
        assert abs(gap) / st["emitted"] < 1e-9
        assert st["deposited"] > 0.0

    def test_backfacing_cardioid_has_no_direct(self):
        # source looks exactly away from the receiver
        away = Vec3(-1.0, 2.0, 0.5)
        src = Source(
            "src0",
            Vec3(2.0, 3.0, 1.5),
            directivity=Directivity(kind="cardioid", orientation=away),
        )
        scene = make_lab_scene(alpha=0.3, scattering=0.5, sources=(src,))
        ech = trace(scene, "src0", RtConfig(n_rays=2000, max_time=0.3, seed=5))[0]
        assert ech.direct_energy.sum() == 0.0
        # reverberant rain still arrives
        assert ech.bins.sum() > 0.0

    def test_obstacle_blocks_direct_path(self):
        box = Box(Vec3(2.2, 1.6, 0.5), Vec3(2.8, 2.4, 2.0), material="brick")
        scene = make_lab_scene(alpha=0.3, scattering=0.5, boxes=(box,))
        ech = trace(scene, "src0", RtConfig(n_rays=2000, max_time=0.3, seed=5))[0]
        assert ech.direct_energy.sum() == 0.0
        assert ech.bins.sum() > 0.0


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        scene = make_lab_scene(alpha=0.3, scattering=0.5)
        cfg = RtConfig(n_rays=3000, max_time=0.4, seed=11)
        a = trace(scene, "src0", cfg)[0]
        b = trace(scene, "src0", cfg)[0]
        assert np.array_equal(a.bins, b.bins)

    def test_different_seed_differs(self):
        scene = make_lab_scene(alpha=0.3, scattering=0.5)
        a = trace(scene, "src0", RtConfig(n_rays=3000, max_time=0.4, seed=11))[0]
        b = trace(scene, "src0", RtConfig(n_rays=3000, max_time=0.4, seed=1 << 32))[0]
        assert not np.array_equal(a.bins, b.bins)

    @pytest.mark.skipif(not backend.HAVE_NUMBA, reason="needs numba")
    def test_thread_count_invariant(self):
        scene = make_lab_scene(alpha=0.3, scattering=0.5)
        cfg = RtConfig(n_rays=3000, max_time=0.4, seed=11)
        try:
            backend.set_threads(1)
            one = trace(scene, "src0", cfg)[0]
            backend.set_threads(8)
            many = trace(scene, "src0", cfg)[0]
        finally:
            backend.set_threads(8)
        assert np.array_equal(one.bins, many.bins)

    @pytest.mark.skipif(not backend.HAVE_NUMBA, reason="needs numba")
    def test_backends_agree_to_accumulation_order(self, monkeypatch):
        scene = make_lab_scene(alpha=0.3, scattering=0.5)
        cfg = RtConfig(n_rays=3000, max_time=0.4, seed=11)
        compiled = trace(scene, "src0", cfg)[0]
        monkeypatch.setattr(backend, "USE_NUMBA", False)
        vectorized = trace(scene, "src0", cfg)[0]
        # same trajectories and deposits; only summation order differs
        np.testing.assert_allclose(
            vectorized.bins, compiled.bins, rtol=1e-12, atol=1e-18
        )
        assert vectorized.stats["absorbed"] == pytest.approx(
            compiled.stats["absorbed"], rel=1e-12
        )


class TestConvergence:
    def test_variance_shrinks_with_ray_count(self):
        # XOR stream ids make nearby seeds permutations of the same ray
        # ensemble, so spread the seeds far apart
        scene = make_lab_scene(alpha=0.3, scattering=0.5)
        stds = []
        for n_rays in (2000, 20000):
            totals = []
            for s in range(6):
                cfg = RtConfig(n_rays=n_rays, max_time=0.4, seed=(s + 1) << 20)
                ech = trace(scene, "src0", cfg)[0]
                totals.append(ech.bins.sum() - ech.direct_energy.sum())
            stds.append(np.std(totals))
        assert stds[0] > 2.0 * stds[1]

    def test_t60_matches_eyring_in_diffuse_room(self):
        # fully scattering walls are the regime the Eyring formula models
        scene = make_lab_scene(alpha=0.3, scattering=1.0)
        cfg = RtConfig(n_rays=20000, max_time=0.7, seed=42)
        ech = trace(scene, "src0", cfg)[0]
        t60 = echogram_t60(ech)
        want = eyring_t60(scene.dims, 0.3)
        assert abs(t60 - want) / want < 0.15, (t60, want)


def _flat_echogram(energy, n_bins=40, direct_bin=None, direct_energy=0.0):
    bins = np.full((dsp.N_BANDS, n_bins), energy)
    e_dir = np.zeros(dsp.N_BANDS)
    t_dir = 0.0
    if direct_bin is not None:
        e_dir[:] = direct_energy
        t_dir = (direct_bin + 0.4) * 1e-3
        bins[:, direct_bin] += direct_energy
    return Echogram(
        bins=bins,
        bin_width=1e-3,
        direct_time=t_dir,
        direct_energy=e_dir,
        receiver_id="rcv0",
    )


class TestEchogramToRir:
    def test_zero_echogram_renders_silence(self):
        rir = echogram_to_rir(_flat_echogram(0.0), seed=1)
        assert rir.samples.shape == (640,)
        assert not rir.samples.any()

    def test_single_entry_energy_is_exact(self):
        bins = np.zeros((dsp.N_BANDS, 40))
        bins[3, 10] = 0.125
        ech = Echogram(
            bins=bins,
            bin_width=1e-3,
            direct_time=0.0,
            direct_energy=np.zeros(dsp.N_BANDS),
        )
        rir = echogram_to_rir(ech, seed=9)
        assert float(rir.samples @ rir.samples) == pytest.approx(0.125, rel=1e-9)
        # energy confined to that millisecond bin
        assert not rir.samples[:160].any()
        assert not rir.samples[176:].any()

    def test_doubling_energy_scales_amplitude_by_sqrt2(self):
        ech1 = _flat_echogram(1e-4, direct_bin=5, direct_energy=2e-3)
        ech2 = Echogram(
            bins=2.0 * ech1.bins,
            bin_width=ech1.bin_width,
            direct_time=ech1.direct_time,
            direct_energy=2.0 * ech1.direct_energy,
        )
        r1 = echogram_to_rir(ech1, seed=4)
        r2 = echogram_to_rir(ech2, seed=4)
        np.testing.assert_allclose(
            r2.samples, math.sqrt(2.0) * r1.samples, rtol=1e-12, atol=1e-18
        )

    def test_direct_pulse_lands_at_exact_delay(self):
        bins = np.zeros((dsp.N_BANDS, 40))
        e_dir = np.full(dsp.N_BANDS, 1e-3)
        t_dir = 7.3e-3  # fractional sample delay at 16 kHz
        kdir = int(t_dir / 1e-3)
        bins[:, kdir] = e_dir
        ech = Echogram(
            bins=bins, bin_width=1e-3, direct_time=t_dir, direct_energy=e_dir
        )
        rir = echogram_to_rir(ech, seed=2)
        peak = int(np.argmax(np.abs(rir.samples)))
        assert abs(peak - t_dir * 16000.0) <= 1.0
        assert float(rir.samples @ rir.samples) == pytest.approx(
            float(e_dir.sum()), rel=1e-6
        )

    def test_rejects_negative_energy(self):
        ech = _flat_echogram(1e-4)
        ech.bins[2, 3] = -1e-9
        with pytest.raises(EngineError):
            echogram_to_rir(ech, seed=1)


class TestRenderRirRt:
    def test_render_carries_provenance_and_t60(self):
        scene = make_lab_scene(alpha=0.3, scattering=1.0)
        cfg = RtConfig(n_rays=20000, max_time=0.7, seed=3)
        rir = render_rir_rt(scene, "src0", "rcv0", cfg)
        assert rir.engine == "rt"
        assert rir.provenance["receiver_id"] == "rcv0"
        assert rir.provenance["n_rays"] == 20000
        t60 = dsp.fit_t60(rir.samples, rir.sample_rate)
        want = eyring_t60(scene.dims, 0.3)
        assert abs(t60 - want) / want < 0.15, (t60, want)

    def test_unknown_receiver_raises(self):
        scene = make_lab_scene()
        with pytest.raises(EngineError):
            render_rir_rt(scene, "src0", "nope", RtConfig(n_rays=16))
