import itertools
import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from smoother_oracle import scan
from stepmetric.data import render_dataset, scripted_stream
from stepmetric.data.images import save_png
from stepmetric.embed import EmbedderConfig, build_embedder
from stepmetric.errors import ConfigError, DatasetError
from stepmetric.gallery import ANOMALY, build_gallery
from stepmetric.stream import (FolderProvider, ScriptedProvider, SmootherState, next_crop, run_stream, smooth,
                               write_frames)

TINY = EmbedderConfig(input_size=16, channels=(4, 4, 8, 8), embed_dim=16)


def feed(verdicts, state=None):
    state = state or SmootherState()
    events, timeline = [], []
    for i, v in enumerate(verdicts):
        state, ev = smooth(state, v)
        if ev is not None:
            events.append((i, ev))
        timeline.append(state.confirmed)
    return state, events, timeline


def test_worked_examples():
    _, events, _ = feed([3, 3, 3, 3, 3])
    assert events == [(4, 3)]
    state, events, _ = feed([3, 3, 3, 3, 4])
    assert events == [] and state.pending == 4 and state.run == 1
    _, events, _ = feed([4, 4, ANOMALY, 4, 4, 4, 4, 4])
    assert events == [(7, 4)]


def test_exhaustive_against_scanner():
    for string in itertools.product([1, 2, ANOMALY], repeat=8):
        _, events, timeline = feed(string)
        want_timeline, want_events = scan(list(string))
        assert timeline == want_timeline and events == want_events, string


@given(st.lists(st.sampled_from([1, 2, 3, ANOMALY]), max_size=60), st.integers(1, 7))
def test_confirmations_are_backed_by_raw_verdicts(verdicts, required):
    state = SmootherState(required_run=required)
    prev = None
    for i, v in enumerate(verdicts):
        state, ev = smooth(state, v)
        assert state.run <= required
        if v == ANOMALY:
            assert state.confirmed == prev
        if state.confirmed != prev:
            assert ev == state.confirmed
            assert i + 1 >= required and all(x == ev for x in verdicts[i + 1 - required:i + 1])
        else:
            assert ev is None
        prev = state.confirmed


def test_regression_is_allowed():
    _, events, _ = feed([4] * 5 + [3] * 5)
    assert [e for _, e in events] == [4, 3]


def test_repeat_confirmation_is_silent():
    _, events, _ = feed([2] * 5 + [ANOMALY] + [2] * 5)
    assert events == [(4, 2)]


def test_pause_mode_bridges_anomalies():
    state = SmootherState(anomaly_mode="pause")
    _, events, _ = feed([4, 4, ANOMALY, 4, 4, 4], state)
    assert events == [(5, 4)]


def test_smoother_config_validation():
    with pytest.raises(ConfigError):
        SmootherState(required_run=0)
    with pytest.raises(ConfigError):
        SmootherState(anomaly_mode="skip")


# ---- providers ----

def test_folder_provider(tmp_path):
    for i in range(10):
        save_png(tmp_path / f"{i:06d}.png", np.full((16, 16, 3), i / 10, np.float32))
    crops = list(FolderProvider(tmp_path, fps=5.0))
    assert [c.frame_id for c in crops] == list(range(10))
    assert crops[3].timestamp == pytest.approx(0.6)
    p = FolderProvider(tmp_path)
    for _ in range(10):
        assert next_crop(p) is not None
    assert next_crop(p) is None and next_crop(p) is None


def test_folder_provider_empty_and_missing(tmp_path):
    assert next_crop(FolderProvider(tmp_path)) is None
    with pytest.raises(DatasetError):
        FolderProvider(tmp_path / "absent")


def test_folder_provider_skips_unreadable(tmp_path, caplog):
    for i in range(3):
        save_png(tmp_path / f"{i:06d}.png", np.zeros((16, 16, 3), np.float32))
    (tmp_path / "000001.png").write_bytes(b"garbage")
    with caplog.at_level(logging.WARNING):
        ids = [c.frame_id for c in FolderProvider(tmp_path)]
    assert ids == [0, 2] and "000001.png" in caplog.text


def test_scripted_provider_round_trip(tmp_path):
    frames, truth, _ = scripted_stream([(1, 20), (2, 20)], seed=0, steps=2, size=16)
    assert len(frames) == 40 and truth == [1] * 20 + [2] * 20
    write_frames(tmp_path, frames)
    from_disk = list(FolderProvider(tmp_path))
    in_memory = list(ScriptedProvider(frames))
    assert len(from_disk) == len(in_memory) == 40
    for a, b in zip(from_disk, in_memory):
        assert a.frame_id == b.frame_id
        np.testing.assert_array_equal(a.image, b.image)


# ---- run_stream ----

@pytest.fixture(scope="module")
def tiny_system():
    data = render_dataset(0, steps=2, per_step=6, size=16)
    model = build_embedder(TINY, seed=0)
    return model, build_gallery(model, data, k=1, tau_rule=1e6), data


def test_memorised_stream_confirms_in_order(tiny_system, tmp_path):
    model, gallery, data = tiny_system
    frames = [img.pixels for img in data.groups[1]] + [img.pixels for img in data.groups[2]]
    seen = []
    log_ = run_stream(model, gallery, ScriptedProvider(frames), on_event=lambda *a: seen.append(a),
                      out_dir=tmp_path)
    assert log_.confirmed_sequence == [1, 2]
    assert [fid for fid, _, _ in seen] == [4, 10]
    assert (tmp_path / "runlog.csv").read_text().splitlines()[0].startswith("frame_id,")
    assert (tmp_path / "timeline.csv").read_text().splitlines()[1:] == ["4,0.8,1", "10,2.0,2"]
    again = run_stream(model, gallery, ScriptedProvider(frames))
    assert again.log_csv() == log_.log_csv()


def test_occluded_stream_never_confirms(tiny_system):
    model, _, data = tiny_system
    strict = build_gallery(model, data, k=1, tau_rule=1e-9)
    frames = [np.ones((16, 16, 3), np.float32)] * 12
    result = run_stream(model, strict, ScriptedProvider(frames))
    assert result.events == [] and all(e.raw_verdict == ANOMALY for e in result.entries)
    assert all(e.confirmed_step is None for e in result.entries)


def test_empty_stream(tiny_system):
    model, gallery, _ = tiny_system
    result = run_stream(model, gallery, ScriptedProvider([]))
    assert result.entries == [] and result.confirmed_sequence == []


def test_wrong_size_crops_are_skipped(tiny_system):
    model, gallery, data = tiny_system
    frames = [data.images[0].pixels, np.zeros((8, 8, 3), np.float32), data.images[1].pixels]
    result = run_stream(model, gallery, ScriptedProvider(frames))
    assert result.skipped == [1] and [e.frame_id for e in result.entries] == [0, 2]
