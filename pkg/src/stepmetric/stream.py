"""Streaming step estimation over pre-cropped frames with run-length confirmation."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .data.images import load_png
from .embed import embed
from .errors import ConfigError, DatasetError
from .gallery import ANOMALY, Gallery, classify

log = logging.getLogger(__name__)

ANOMALY_MODES = ("reset", "pause")


@dataclass(frozen=True)
class FrameCrop:
    frame_id: int
    timestamp: float
    image: np.ndarray


class FolderProvider:
    """Frames ``<dir>/<zero-padded index>.png`` in filename order.

    Unreadable files are skipped with a warning.
    """

    def __init__(self, folder, fps: float = 5.0):
        self.folder = Path(folder)
        if not self.folder.is_dir():
            raise DatasetError(f"frame folder {self.folder} does not exist")
        self.fps = fps
        self._files = sorted(self.folder.glob("*.png"))
        self._pos = 0
        self._last_id = -1

    def next_crop(self) -> FrameCrop | None:
        while self._pos < len(self._files):
            path = self._files[self._pos]
            self._pos += 1
            try:
                image = load_png(path)
            except DatasetError as exc:
                log.warning("skipping frame: %s", exc)
                continue
            frame_id = int(path.stem) if path.stem.isdigit() else self._last_id + 1
            if frame_id <= self._last_id:
                frame_id = self._last_id + 1
            self._last_id = frame_id
            return FrameCrop(frame_id, frame_id / self.fps, image)
        return None

    def __iter__(self) -> Iterator[FrameCrop]:
        while (crop := self.next_crop()) is not None:
            yield crop


class ScriptedProvider:
    """In-memory frames, e.g. from :func:`stepmetric.data.synth.scripted_stream`."""

    def __init__(self, frames, fps: float = 5.0):
        self.frames = list(frames)
        self.fps = fps
        self._pos = 0

    def next_crop(self) -> FrameCrop | None:
        if self._pos >= len(self.frames):
            return None
        i = self._pos
        self._pos += 1
        return FrameCrop(i, i / self.fps, self.frames[i])

    def __iter__(self):
        while (crop := self.next_crop()) is not None:
            yield crop


def next_crop(provider) -> FrameCrop | None:
    return provider.next_crop()


def write_frames(folder, frames):
    from .data.images import save_png

    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        save_png(folder / f"{i:06d}.png", frame)


@dataclass(frozen=True)
class SmootherState:
    pending: object = None          # step index, ANOMALY or None
    run: int = 0
    confirmed: int | None = None
    required_run: int = 5
    anomaly_mode: str = "reset"

    def __post_init__(self):
        if self.required_run < 1:
            raise ConfigError(f"required_run must be >= 1, got {self.required_run}")
        if self.anomaly_mode not in ANOMALY_MODES:
            raise ConfigError(f"anomaly_mode must be one of {ANOMALY_MODES}, got {self.anomaly_mode!r}")


def smooth(state: SmootherState, verdict) -> tuple[SmootherState, int | None]:
    """Feed one per-frame verdict; returns the new state and a confirmed step or ``None``.

    In ``reset`` mode an anomaly verdict clears the pending run; in ``pause``
    mode it is ignored. The confirmed step never changes on an anomaly.
    """
    if verdict is None or verdict == ANOMALY:
        if state.anomaly_mode == "pause":
            return state, None
        return replace(state, pending=None, run=0), None
    if verdict == state.pending:
        run = min(state.run + 1, state.required_run)
    else:
        run = 1
    new = replace(state, pending=verdict, run=run)
    if run == state.required_run and verdict != state.confirmed:
        return replace(new, confirmed=verdict), verdict
    return new, None


@dataclass
class RunLogEntry:
    frame_id: int
    timestamp: float
    raw_verdict: object
    nearest_distance: float
    confirmed_step: int | None


@dataclass
class RunLog:
    entries: list = field(default_factory=list)
    events: list = field(default_factory=list)     # (frame_id, timestamp, step)
    skipped: list = field(default_factory=list)

    def log_csv(self) -> str:
        lines = ["frame_id,timestamp,raw_verdict,nearest_distance,confirmed_step"]
        for e in self.entries:
            conf = "" if e.confirmed_step is None else str(e.confirmed_step)
            lines.append(f"{e.frame_id},{e.timestamp!r},{e.raw_verdict},{e.nearest_distance!r},{conf}")
        return "\n".join(lines) + "\n"

    def timeline_csv(self) -> str:
        lines = ["frame_id,timestamp,confirmed_step"]
        lines += [f"{fid},{ts!r},{step}" for fid, ts, step in self.events]
        return "\n".join(lines) + "\n"

    @property
    def confirmed_sequence(self) -> list:
        return [step for _, _, step in self.events]


def run_stream(model, gallery: Gallery, provider, smoother: SmootherState = SmootherState(),
               on_event: Callable | None = None, out_dir=None) -> RunLog:
    """embed -> classify -> smooth for every crop, in frame order."""
    state = smoother
    result = RunLog()
    for crop in iter(provider.next_crop, None):
        if crop.image.shape != model.input_shape:
            log.warning("frame %d: crop shape %s does not match %s; skipped", crop.frame_id,
                        crop.image.shape, model.input_shape)
            result.skipped.append(crop.frame_id)
            continue
        pred = classify(gallery, embed(model, crop.image))
        state, event = smooth(state, pred.verdict)
        result.entries.append(RunLogEntry(crop.frame_id, crop.timestamp, pred.verdict, pred.nearest,
                                          state.confirmed))
        if event is not None:
            result.events.append((crop.frame_id, crop.timestamp, event))
            if on_event is not None:
                on_event(crop.frame_id, crop.timestamp, event)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "runlog.csv").write_text(result.log_csv())
        (out / "timeline.csv").write_text(result.timeline_csv())
    return result
