"""Clip sampling and the expensive/cheap assignment pattern.

A schedule fixes how many clips are cut from a video, how long each clip is,
and which backbone processes each clip. For "1:x" patterns one expensive
clip is followed by x cheap clips, repeated; the first clip is always the
expensive one whenever any expensive clip exists.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ShapeError

RATIO_MENU = (0, 1, 3, 7, 15, 31)


@dataclass(frozen=True)
class ClipSchedule:
    frames_per_clip: int
    num_clips: int
    assignments: tuple[str, ...]      # 'E' or 'C' per clip index
    ratio: str | None = None          # "1:x", "all-e", "all-c", or None for custom

    def __post_init__(self):
        if len(self.assignments) != self.num_clips:
            raise ShapeError(
                f"pattern length {len(self.assignments)} != num_clips {self.num_clips}")
        if "E" in self.assignments and self.assignments[0] != "E":
            raise ShapeError("first clip must be expensive whenever any clip is")

    @property
    def expensive_count(self) -> int:
        return sum(1 for a in self.assignments if a == "E")

    @property
    def frame_budget(self) -> int:
        return self.frames_per_clip * self.num_clips


def feasible_ratios(num_clips: int) -> list[int]:
    return [x for x in RATIO_MENU if num_clips % (x + 1) == 0]


def make_pattern(num_clips: int, x: int | None, frames_per_clip: int = 8) -> ClipSchedule:
    """Build a schedule: x=0 all expensive, x=None all cheap, else 1:x.

    For 1:x the expensive clips sit at indices 0, x+1, 2(x+1), ...; x+1 must
    divide the clip count.
    """
    if num_clips < 1:
        raise ShapeError(f"need at least one clip, got {num_clips}")
    if x is None:
        return ClipSchedule(frames_per_clip, num_clips, ("C",) * num_clips, "all-c")
    if x < 0:
        raise ShapeError(f"cheap-to-expensive ratio must be >= 0, got {x}")
    if num_clips % (x + 1) != 0:
        raise ShapeError(
            f"pattern 1:{x} infeasible for {num_clips} clips "
            f"(x+1 must divide the clip count; feasible x: {feasible_ratios(num_clips)})")
    assignments = tuple("E" if i % (x + 1) == 0 else "C" for i in range(num_clips))
    ratio = "all-e" if x == 0 else f"1:{x}"
    return ClipSchedule(frames_per_clip, num_clips, assignments, ratio)


def parse_pattern(text: str, num_clips: int, frames_per_clip: int = 8) -> ClipSchedule:
    """Parse a CLI pattern string: '1:3', 'all-e', or 'all-c'."""
    t = text.strip().lower()
    if t in ("all-c", "allc", "all-cheap"):
        return make_pattern(num_clips, None, frames_per_clip)
    if t in ("all-e", "alle", "all-expensive"):
        return make_pattern(num_clips, 0, frames_per_clip)
    if ":" in t:
        lhs, rhs = t.split(":", 1)
        if lhs.strip() == "1":
            try:
                x = int(rhs)
            except ValueError:
                raise ShapeError(f"bad pattern {text!r}") from None
            return make_pattern(num_clips, x, frames_per_clip)
    raise ShapeError(f"bad pattern {text!r}; expected '1:x', 'all-e' or 'all-c'")


@dataclass(frozen=True)
class ClipWindow:
    start: int
    length: int


@dataclass(frozen=True)
class ClipSet:
    video_id: int
    video_len: int
    windows: tuple[ClipWindow, ...]

    def frame_indices(self, i: int) -> np.ndarray:
        """Frame indices of clip i; short videos wrap around (loop padding)."""
        w = self.windows[i]
        return (w.start + np.arange(w.length)) % self.video_len


def sample_clips_eval(video_len: int, frames_per_clip: int, num_clips: int,
                      video_id: int = 0) -> ClipSet:
    """Deterministic uniform coverage: evenly spaced starts from the first to
    the last possible window; a single clip is centered. Videos shorter than
    one clip wrap around."""
    if frames_per_clip < 1 or num_clips < 1:
        raise ShapeError("clip length and count must be >= 1")
    span = max(video_len - frames_per_clip, 0)
    if num_clips == 1:
        starts = [span // 2]
    else:
        starts = [round(i * span / (num_clips - 1)) for i in range(num_clips)]
    windows = tuple(ClipWindow(int(s), frames_per_clip) for s in starts)
    return ClipSet(video_id, video_len, windows)


def sample_clips_train(video_len: int, frames_per_clip: int, num_clips: int,
                       rng: np.random.Generator, video_id: int = 0) -> ClipSet:
    """Independent uniform starts, sorted so the recurrence consumes clips in
    time order. Videos shorter than one clip draw a wrapped start anywhere."""
    if frames_per_clip < 1 or num_clips < 1:
        raise ShapeError("clip length and count must be >= 1")
    span = video_len - frames_per_clip
    if span >= 0:
        starts = rng.integers(0, span + 1, size=num_clips)
    else:
        starts = rng.integers(0, video_len, size=num_clips)
    starts = np.sort(starts)
    windows = tuple(ClipWindow(int(s), frames_per_clip) for s in starts)
    return ClipSet(video_id, video_len, windows)
