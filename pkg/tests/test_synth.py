import csv
import hashlib

import numpy as np
import pytest

from acoustic_contact.audio_io import read_wav
from acoustic_contact.errors import InvalidConfig, InvalidDuration
from acoustic_contact.synth import (
    CONTACT_KINDS,
    DEFAULT_PROFILES,
    CorpusSpec,
    InteractionKind,
    Jitter,
    MaterialProfile,
    corpus_plan,
    corpus_spec_from_dict,
    generate_corpus,
    synth_clip,
)

FS = 48000
PROFILES = {p.name: p for p in DEFAULT_PROFILES}


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def test_blank_is_quiet():
    clip = synth_clip(None, "blank", 2.0, FS, seed=1)
    assert len(clip) == 2 * FS
    assert rms(clip.samples) < 0.002


@pytest.mark.parametrize("name", sorted(PROFILES))
def test_knock_decays(name):
    x = synth_clip(PROFILES[name], "knock", 1.0, FS, seed=3).samples
    n = FS // 10
    assert np.sum(x[:n] ** 2) > np.sum(x[-n:] ** 2)


@pytest.mark.parametrize("name", sorted(PROFILES))
@pytest.mark.parametrize("kind", [k.value for k in CONTACT_KINDS])
def test_contact_louder_than_blank(name, kind):
    contact = synth_clip(PROFILES[name], kind, 1.0, FS, seed=0).samples
    blank = synth_clip(None, "blank", 1.0, FS, seed=0).samples
    assert rms(contact) > 2 * rms(blank)
    assert np.max(np.abs(contact)) <= 0.99


def test_modal_frequencies_disjoint_across_materials():
    seen = []
    for p in DEFAULT_PROFILES:
        for f in p.modal_freqs_hz:
            assert all(abs(f - g) / g > 0.02 for g in seen), (p.name, f)
        seen.extend(p.modal_freqs_hz)


@pytest.mark.parametrize("name", ["glass_cup", "steel_tumbler", "ceramic_mug"])
def test_knock_spectral_peak_near_a_mode(name):
    profile = PROFILES[name]
    x = synth_clip(profile, "knock", 1.0, FS, seed=11, jitter=Jitter(0, 0, 0)).samples
    spec = np.abs(np.fft.rfft(x))
    peak = np.fft.rfftfreq(len(x), 1 / FS)[np.argmax(spec)]
    assert min(abs(peak - f) / f for f in profile.modal_freqs_hz) < 0.02


def _peak_set(x, k):
    """Frequencies of the k largest local maxima of the magnitude spectrum."""
    mag = np.abs(np.fft.rfft(x))
    freqs = np.fft.rfftfreq(len(x), 1 / FS)
    local = np.flatnonzero((mag[1:-1] > mag[:-2]) & (mag[1:-1] >= mag[2:])) + 1
    top = local[np.argsort(mag[local])[::-1][:k]]
    return sorted(freqs[top])


@pytest.mark.parametrize("a,b", [("glass_cup", "wooden_table"), ("steel_tumbler", "ceramic_mug"), ("plastic_lid", "glass_cup")])
def test_knock_peak_sets_disjoint(a, b):
    no_jitter = Jitter(0, 0, 0)
    pa = _peak_set(synth_clip(PROFILES[a], "knock", 1.0, FS, 1, no_jitter).samples, 3)
    pb = _peak_set(synth_clip(PROFILES[b], "knock", 1.0, FS, 1, no_jitter).samples, 3)
    assert all(abs(f - g) > 20.0 for f in pa for g in pb), (pa, pb)


def test_same_seed_same_samples():
    p = PROFILES["glass_cup"]
    a = synth_clip(p, "drag", 1.0, FS, seed=42)
    b = synth_clip(p, "drag", 1.0, FS, seed=42)
    c = synth_clip(p, "drag", 1.0, FS, seed=43)
    assert np.array_equal(a.samples, b.samples)
    assert not np.array_equal(a.samples, c.samples)


def test_invalid_duration_and_profile():
    with pytest.raises(InvalidDuration):
        synth_clip(None, "blank", 0.1, FS, seed=0)
    with pytest.raises(InvalidConfig):
        synth_clip(None, "tap", 1.0, FS, seed=0)
    with pytest.raises(InvalidConfig):
        MaterialProfile("x", (100.0,), (1.0,), (0, 10), 0.5)
    with pytest.raises(InvalidConfig):
        MaterialProfile("x", (200.0, 100.0), (1.0, 1.0), (0, 10), 0.5)
    with pytest.raises(InvalidConfig):
        CorpusSpec(profiles=(MaterialProfile("blank", (1.0, 2.0), (1.0, 1.0), (0, 1), 0),))


def test_default_plan_counts():
    plan = corpus_plan(CorpusSpec())
    assert len(plan) == 9 * 4 * 5 + 20 == 200
    classes = {cls for cls, *_ in plan}
    assert len(classes) == 10 and "blank" in classes
    assert len({seed for *_, seed, _ in plan}) == 200


def _tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def small_spec(seed=0):
    return CorpusSpec(
        profiles=(PROFILES["glass_cup"], PROFILES["plush_toy"]),
        clips_per_cell=1,
        blank_clips=2,
        clip_duration_s=1.0,
        master_seed=seed,
    )


def test_generate_corpus_layout_and_determinism(tmp_path):
    manifest = generate_corpus(small_spec(), tmp_path / "a")
    assert len(manifest) == 2 * 4 + 2
    dirs = sorted(p.name for p in (tmp_path / "a").iterdir() if p.is_dir())
    assert dirs == ["blank", "glass_cup", "plush_toy"]
    with open(tmp_path / "a" / "manifest.csv") as fp:
        rows = list(csv.DictReader(fp))
    assert [r["path"] for r in rows] == [m.path for m in manifest]
    assert rows[0]["interaction"] == "tap"
    clip = read_wav(tmp_path / "a" / rows[0]["path"])
    assert clip.sample_rate_hz == FS and len(clip) == FS

    for wav in (tmp_path / "a").rglob("*.wav"):
        clip = read_wav(wav)
        assert np.all(np.abs(clip.samples) <= 0.99 + 1 / 32768)

    generate_corpus(small_spec(), tmp_path / "b")
    generate_corpus(small_spec(1), tmp_path / "c")
    assert _tree_digest(tmp_path / "a") == _tree_digest(tmp_path / "b")
    assert _tree_digest(tmp_path / "a") != _tree_digest(tmp_path / "c")


def test_corpus_spec_from_dict():
    spec = corpus_spec_from_dict(
        {
            "corpus": {"clips_per_cell": 2, "interactions": ["tap", "knock"]},
            "jitter": {"freq": 0.0},
            "profiles": [
                {
                    "name": "tin",
                    "modal_freqs_hz": [900, 2000],
                    "decay_rates_per_s": [5, 8],
                    "noise_band_hz": [1000, 5000],
                    "brightness": 0.7,
                }
            ],
        },
        master_seed=9,
    )
    assert spec.clips_per_cell == 2 and spec.master_seed == 9
    assert spec.interactions == (InteractionKind.TAP, InteractionKind.KNOCK)
    assert spec.jitter.freq == 0.0 and spec.profiles[0].name == "tin"
    with pytest.raises(InvalidConfig, match="bogus"):
        corpus_spec_from_dict({"corpus": {"bogus": 1}})
