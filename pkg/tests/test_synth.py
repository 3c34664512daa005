"""Generator checks: recipes stay mutually distinct, hypnograms respect
the transition graph and the stage budget, nights rebuild bit-for-bit
from their seed, the rendered signals separate by stage where the
feature extractor looks, and corpora survive a disk round trip.
"""

import dataclasses
import json

import numpy as np
import pytest
from scipy import stats

from ossmm_kit import features, ingest, synth
from ossmm_kit.errors import ValidationError
from ossmm_kit.model import EPOCH_MS, SleepStage

STAGES = (SleepStage.DEEP, SleepStage.LIGHT, SleepStage.REM, SleepStage.WAKE)


# --- recipes ------------------------------------------------------------------

def test_default_profiles_validate():
    synth.validate_profiles(synth.DEFAULT_PROFILES)
    assert set(synth.DEFAULT_PROFILES) == set(STAGES)


def test_profiles_pairwise_distinct():
    profs = list(synth.DEFAULT_PROFILES.values())
    for i, a in enumerate(profs):
        for b in profs[i + 1:]:
            assert synth.profile_differences(a, b) >= 3, (a.stage, b.stage)


def test_alpha_recipe_ordering():
    # the alpha band is the workhorse contrast; its injected scale must
    # be strictly ordered Deep < REM < Light < Wake
    alpha = {s: synth.DEFAULT_PROFILES[s].band_sigma[2] for s in STAGES}
    assert (alpha[SleepStage.DEEP] < alpha[SleepStage.REM]
            < alpha[SleepStage.LIGHT] < alpha[SleepStage.WAKE])


def test_bad_profile_rejected():
    bad = dataclasses.replace(synth.DEFAULT_PROFILES[SleepStage.DEEP],
                              spindle_rate_per_min=-1.0)
    profs = dict(synth.DEFAULT_PROFILES)
    profs[SleepStage.DEEP] = bad
    with pytest.raises(ValidationError):
        synth.validate_profiles(profs)


def test_missing_stage_rejected():
    profs = dict(synth.DEFAULT_PROFILES)
    del profs[SleepStage.REM]
    with pytest.raises(ValidationError):
        synth.validate_profiles(profs)


# --- hypnograms ---------------------------------------------------------------

def test_hypnogram_deterministic():
    a = synth.generate_hypnogram(np.random.default_rng(3), 110)
    b = synth.generate_hypnogram(np.random.default_rng(3), 110)
    assert a.stages == b.stages


def test_hypnogram_follows_transition_graph():
    for seed in range(12):
        hyp = synth.generate_hypnogram(np.random.default_rng(seed), 90)
        for prev, cur in zip(hyp.stages, hyp.stages[1:]):
            assert cur == prev or cur in synth.ADJACENT[prev], (prev, cur)


def test_hypnogram_covers_every_stage():
    for seed in range(12):
        hyp = synth.generate_hypnogram(np.random.default_rng(seed), 110)
        counts = hyp.counts()
        assert all(counts[s] >= 3 for s in STAGES), counts


def test_hypnogram_mix_near_target():
    # pooled over many nights the walk must land within 10 points of the
    # stage mix it steers toward
    pooled = {s: 0 for s in STAGES}
    total = 0
    for seed in range(20):
        hyp = synth.generate_hypnogram(np.random.default_rng(seed), 110)
        for s, c in hyp.counts().items():
            pooled[s] += c
        total += len(hyp)
    for s in STAGES:
        assert abs(pooled[s] / total - synth.TARGET_MIX[s]) <= 0.10, s


def test_hypnogram_runs_reconstruct():
    hyp = synth.generate_hypnogram(np.random.default_rng(5), 64)
    rebuilt = [s for s, n in hyp.runs() for _ in range(n)]
    assert tuple(rebuilt) == hyp.stages


# --- single nights ------------------------------------------------------------

def test_night_deterministic():
    ra, la, ha = synth.generate_night(77, 12)
    rb, lb, hb = synth.generate_night(77, 12)
    assert np.array_equal(ra.frames.t_ms, rb.frames.t_ms)
    for name in ra.frames.channels:
        assert np.array_equal(ra.frames.channels[name], rb.frames.channels[name])
    assert la == lb
    assert ha.stages == hb.stages


def test_night_seed_changes_content():
    ra, _, _ = synth.generate_night(77, 12)
    rb, _, _ = synth.generate_night(78, 12)
    assert not np.array_equal(ra.frames.channels["eog"], rb.frames.channels["eog"])


def test_night_minimum_duration():
    with pytest.raises(ValidationError):
        synth.generate_night(1, 9)


def test_night_structure_and_boundaries():
    rec, labels, hyp = synth.generate_night(21, 14)
    assert len(labels) == len(hyp) == 14

    # labels sit on a strict 30 s grid and the first one starts before
    # the recording (the head of its window was trimmed)
    deltas = [(b.start_utc - a.start_utc).total_seconds()
              for a, b in zip(labels, labels[1:])]
    assert all(d == 30.0 for d in deltas)
    head_cut_ms = round((rec.start_utc - labels[0].start_utc).total_seconds() * 1000)
    assert head_cut_ms % 1000 == 0 and 2000 <= head_cut_ms <= 5000

    # frame grid: contiguous 4 ms steps, and the total count is the
    # nominal night minus both boundary cuts
    t = rec.frames.t_ms
    assert t[0] == 0 and np.all(np.diff(t) == 4)
    tail_cut_ms = 14 * EPOCH_MS - head_cut_ms - len(rec.frames) * 4
    assert tail_cut_ms % 1000 == 0 and 2000 <= tail_cut_ms <= 5000

    # alignment sees exactly two short epochs: the first and the last
    epochs, summary = ingest.align(rec, labels)
    assert summary.labels_total == 14
    assert summary.excluded_short == 2 and summary.excluded_not_detected == 0
    assert not epochs[0].qualified and not epochs[-1].qualified
    assert all(e.qualified and e.sample_count == 7500 for e in epochs[1:-1])
    assert [e.stage for e in epochs] == [s for s in hyp.stages]


def test_forced_boundary_cuts():
    rec, labels, _, truth = synth._generate_night_full(
        9, 12, head_cut_ms=3000, tail_cut_ms=2000)
    assert truth.head_cut_ms == 3000 and truth.tail_cut_ms == 2000
    assert len(rec.frames) == 12 * 7500 - (3000 + 2000) // 4
    assert (rec.start_utc - labels[0].start_utc).total_seconds() == 3.0


def test_fractional_second_cut_rejected():
    with pytest.raises(ValidationError):
        synth._generate_night_full(9, 12, head_cut_ms=1500)


def test_dropout_epochs_carry_not_detected_labels():
    rec, labels, hyp, truth = synth._generate_night_full(9, 12, nd_epochs=(4,))
    assert labels[4].stage == SleepStage.NOT_DETECTED
    assert hyp.stages[4] != SleepStage.NOT_DETECTED     # signal keeps its recipe
    assert truth.not_detected_epochs == [4]
    _, summary = ingest.align(rec, labels)
    assert summary.excluded_not_detected == 1
    assert summary.excluded_short == 2


# --- signal content -----------------------------------------------------------

@pytest.fixture(scope="module")
def two_night_table():
    """Feature table over two fresh nights, plus per-epoch truth keyed by
    (night, epoch)."""
    vectors = []
    truths = {}
    for seed in (5, 6):
        nid = f"n{seed}"
        rec, labels, _, truth = synth._generate_night_full(
            seed, 110, night_id=nid)
        epochs, _ = ingest.align(rec, labels)
        vectors.extend(features.extract_epochs(epochs))
        truths[nid] = truth
    return features.FeatureTable.from_vectors(vectors), truths


def _column(table, name):
    return table.X[:, features.FEATURE_NAMES.index(name)]


def _by_stage(table, name):
    col = _column(table, name)
    return {s: col[table.stages == int(s)] for s in STAGES}


def _greater(a, b):
    """One-sided Welch p-value for mean(a) > mean(b)."""
    return stats.ttest_ind(a, b, equal_var=False, alternative="greater").pvalue


def test_every_stage_well_sampled(two_night_table):
    table, _ = two_night_table
    counts = table.stage_counts()
    assert all(counts.get(s.display, 0) >= 10 for s in STAGES), counts


def test_delta_power_separates_deep(two_night_table):
    g = _by_stage(two_night_table[0], "eog.delta_power")
    d = SleepStage.DEEP
    for other in (SleepStage.LIGHT, SleepStage.REM, SleepStage.WAKE):
        assert _greater(g[d], g[other]) < 0.01, other


def test_spindles_separate_light(two_night_table):
    g = _by_stage(two_night_table[0], "eog.spindle_event_count")
    light = SleepStage.LIGHT
    for other in (SleepStage.DEEP, SleepStage.REM, SleepStage.WAKE):
        assert _greater(g[light], g[other]) < 0.01, other


def test_saccades_separate_rem_from_light(two_night_table):
    g = _by_stage(two_night_table[0], "eog.saccade_event_count")
    assert _greater(g[SleepStage.REM], g[SleepStage.LIGHT]) < 0.01


def test_beat_variability_separates_rem(two_night_table):
    g = _by_stage(two_night_table[0], "pulse.ibi_sdnn_ms")
    assert _greater(g[SleepStage.REM], g[SleepStage.LIGHT]) < 0.01
    assert _greater(g[SleepStage.REM], g[SleepStage.WAKE]) < 0.01


def test_movement_separates_wake(two_night_table):
    g = _by_stage(two_night_table[0], "imu.movement_event_count")
    assert _greater(g[SleepStage.WAKE], g[SleepStage.LIGHT]) < 0.01
    assert _greater(g[SleepStage.WAKE], g[SleepStage.DEEP]) < 0.01


def test_alpha_power_orders_all_four_stages(two_night_table):
    g = _by_stage(two_night_table[0], "eog.alpha_power")
    assert _greater(g[SleepStage.WAKE], g[SleepStage.LIGHT]) < 0.01
    assert _greater(g[SleepStage.LIGHT], g[SleepStage.REM]) < 0.01
    assert _greater(g[SleepStage.REM], g[SleepStage.DEEP]) < 0.01


def test_detectors_recover_injected_events(two_night_table):
    """The extractor's event counters must agree with what the generator
    wrote down: spindles mostly recovered, movement bursts exactly."""
    table, truths = two_night_table
    spindles_det = _column(table, "eog.spindle_event_count")
    moves_det = _column(table, "imu.movement_event_count")
    inj_sp = det_sp = 0
    for i in range(len(table)):
        truth = truths[table.night_ids[i]]
        k = int(table.epoch_idx[i])
        if k in (0, len(truth.stages) - 1):
            continue            # boundary-trimmed epochs are not comparable
        inj_sp += truth.spindle_counts[k]
        det_sp += min(int(spindles_det[i]), truth.spindle_counts[k])
        assert int(moves_det[i]) == truth.movement_counts[k], (i, k)
    assert inj_sp > 100
    assert det_sp / inj_sp >= 0.80


def test_rem_epochs_show_more_saccades_than_light(two_night_table):
    table, _ = two_night_table
    g = _by_stage(table, "eog.saccade_event_count")
    assert g[SleepStage.REM].mean() > 2 * g[SleepStage.LIGHT].mean()


# --- corpora ------------------------------------------------------------------

@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = synth.generate_corpus(root, seed=7, n_nights=5,
                                     epochs_range=(40, 48))
    return root, manifest


def test_corpus_minimum_size(tmp_path):
    with pytest.raises(ValidationError):
        synth.generate_corpus(tmp_path / "c", seed=1, n_nights=4)


def test_corpus_layout(small_corpus):
    root, manifest = small_corpus
    assert manifest["format_name"] == "ossmm-corpus"
    assert manifest["seed"] == 7 and manifest["n_nights"] == 5
    assert len(manifest["night_ids"]) == 5
    assert len(manifest["epochs_per_night"]) == 5
    for nid in manifest["night_ids"]:
        night_dir = root / nid
        for fname in (ingest.FRAMES_FILE, ingest.LABELS_FILE,
                      ingest.META_FILE, synth.TRUTH_FILE):
            assert (night_dir / fname).is_file(), (nid, fname)
    on_disk = json.loads((root / ingest.MANIFEST_FILE).read_text())
    assert on_disk == manifest


def test_corpus_split_held_out_nights_not_adjacent(small_corpus):
    _, manifest = small_corpus
    ids = manifest["night_ids"]
    test_ids = manifest["split"]["test_nights"]
    assert len(test_ids) == 3
    assert sorted(manifest["split"]["train_nights"] + test_ids) == sorted(ids)
    pos = sorted(ids.index(t) for t in test_ids)
    assert all(b - a >= 2 for a, b in zip(pos, pos[1:])), pos


def test_corpus_reingests_cleanly(small_corpus):
    root, manifest = small_corpus
    corpus = ingest.load_corpus(root)
    assert corpus.night_ids == manifest["night_ids"]
    per_night, total = ingest.census(corpus)
    assert total.labels_total == sum(manifest["epochs_per_night"])
    # every night loses exactly its two boundary-trimmed epochs
    assert total.excluded_short == 2 * 5
    nd_truth = 0
    for nid in manifest["night_ids"]:
        truth = json.loads((root / nid / synth.TRUTH_FILE).read_text())
        nd_truth += len(truth["not_detected_epochs"])
    assert total.excluded_not_detected == nd_truth
    assert total.qualified == (total.labels_total - total.excluded_short
                               - total.excluded_not_detected)


def test_corpus_dropouts_only_in_training_nights(small_corpus):
    root, manifest = small_corpus
    for nid in manifest["night_ids"]:
        truth = json.loads((root / nid / synth.TRUTH_FILE).read_text())
        if truth["not_detected_epochs"]:
            assert nid in manifest["split"]["train_nights"], nid


def test_corpus_stage_mix_within_tolerance(small_corpus):
    root, manifest = small_corpus
    pooled = {s.display: 0 for s in STAGES}
    total = 0
    for nid in manifest["night_ids"]:
        truth = json.loads((root / nid / synth.TRUTH_FILE).read_text())
        for disp in truth["stages"]:
            pooled[disp] += 1
            total += 1
    for s in STAGES:
        assert abs(pooled[s.display] / total - synth.TARGET_MIX[s]) <= 0.10, s


def test_corpus_regenerates_byte_identical(small_corpus, tmp_path):
    root, manifest = small_corpus
    again = tmp_path / "again"
    manifest2 = synth.generate_corpus(again, seed=7, n_nights=5,
                                      epochs_range=(40, 48))
    assert manifest2 == manifest
    assert ((again / ingest.MANIFEST_FILE).read_bytes()
            == (root / ingest.MANIFEST_FILE).read_bytes())
    for nid in manifest["night_ids"][:2]:
        for fname in (ingest.FRAMES_FILE, ingest.LABELS_FILE,
                      ingest.META_FILE, synth.TRUTH_FILE):
            assert ((again / nid / fname).read_bytes()
                    == (root / nid / fname).read_bytes()), (nid, fname)
