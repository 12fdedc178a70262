"""Lip-region detection and tracking.

The detector is a hand-designed cascade of Haar-like contrast tests
evaluated on integral images: candidate face windows are screened cheapest
test first (texture variance, then eye-band/cheek contrast, then
mouth/surround contrast), and the mouth box is localized as the darkest
mouth-shaped rectangle in the lower face.  This stands in for a trained
Viola-Jones classifier, which needs cascade data unavailable here; the
staged integral-image structure is the same and it is fully deterministic.

Between detection frames the box is carried by normalized cross-correlation
template tracking.
"""

from dataclasses import dataclass

import cv2
import numpy as np

from . import NoLipRegionError


@dataclass
class RoiTrack:
    """Per-frame lip boxes (x, y, w, h) with validity flags."""

    boxes: np.ndarray  # (n, 4) int
    valid: np.ndarray  # (n,) bool

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.int64)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.boxes.shape != (self.valid.size, 4):
            raise ValueError("boxes must be (n, 4) matching the validity flags")

    @property
    def n_frames(self):
        return self.valid.size


def _integral(img):
    return cv2.integral(img.astype(np.float64))  # (h+1, w+1)


def _rect_mean(ii, x, y, w, h):
    total = ii[y + h, x + w] - ii[y, x + w] - ii[y + h, x] + ii[y, x]
    return total / (w * h)


class HaarLikeLipDetector:
    """Face-then-mouth detection from hand-designed Haar-like features."""

    # contrast margins on [0, 1] intensities
    min_eye_contrast = 0.03
    min_mouth_contrast = 0.03
    min_window_std = 0.02
    window_fractions = (0.35, 0.5, 0.65, 0.8, 0.95)

    def detect(self, frame):
        """Return the best lip box (x, y, w, h) or None."""
        face = self._detect_face(frame)
        if face is None:
            return None
        return self._locate_mouth(frame, face)

    def _detect_face(self, frame):
        img = frame.astype(np.float64) / 255.0
        h, w = img.shape
        ii = _integral(img)
        ii2 = _integral(img * img)
        best = None
        best_score = 0.0
        base = min(h, w)
        for frac in self.window_fractions:
            win = int(base * frac)
            if win < 16:
                continue
            stride = max(2, win // 8)
            for y in range(0, h - win + 1, stride):
                for x in range(0, w - win + 1, stride):
                    mean = _rect_mean(ii, x, y, win, win)
                    # cheap reject: flat windows have no facial structure
                    var = _rect_mean(ii2, x, y, win, win) - mean * mean
                    if var < self.min_window_std**2:
                        continue
                    score = self._face_score(ii, x, y, win)
                    if score is not None and score > best_score:
                        best_score = score
                        best = (x, y, win, win)
        return best

    def _face_score(self, ii, x, y, win):
        def band(fx0, fy0, fx1, fy1):
            bx = x + int(fx0 * win)
            by = y + int(fy0 * win)
            bw = max(1, int((fx1 - fx0) * win))
            bh = max(1, int((fy1 - fy0) * win))
            return _rect_mean(ii, bx, by, bw, bh)

        eyes = band(0.15, 0.20, 0.85, 0.40)
        cheeks = band(0.15, 0.44, 0.85, 0.62)
        mouth = band(0.32, 0.66, 0.68, 0.88)
        mouth_sides = 0.5 * (band(0.05, 0.66, 0.28, 0.88) + band(0.72, 0.66, 0.95, 0.88))
        eye_contrast = cheeks - eyes
        mouth_contrast = mouth_sides - mouth
        if eye_contrast < self.min_eye_contrast:
            return None
        if mouth_contrast < self.min_mouth_contrast:
            return None
        return eye_contrast + mouth_contrast

    def _locate_mouth(self, frame, face):
        img = frame.astype(np.float64) / 255.0
        ii = _integral(img)
        fx, fy, fw, fh = face
        mw = max(4, int(0.50 * fw))
        mh = max(4, int(0.22 * fh))
        y_lo = fy + int(0.58 * fh)
        y_hi = min(fy + fh - mh, img.shape[0] - mh)
        x_lo = fx + int(0.10 * fw)
        x_hi = min(fx + fw - mw, img.shape[1] - mw)
        if y_hi < y_lo or x_hi < x_lo:
            return None
        best = None
        darkest = np.inf
        for y in range(y_lo, y_hi + 1, 2):
            for x in range(x_lo, x_hi + 1, 2):
                mean = _rect_mean(ii, x, y, mw, mh)
                if mean < darkest:
                    darkest = mean
                    best = (x, y, mw, mh)
        return best


class TemplateTracker:
    """Normalized cross-correlation tracking of the last detected patch."""

    def __init__(self, min_correlation=0.5, search_margin=0.6):
        self.min_correlation = min_correlation
        self.search_margin = search_margin

    def track(self, frame, template, last_box):
        x, y, w, h = last_box
        margin_x = int(w * self.search_margin)
        margin_y = int(h * self.search_margin)
        x0 = max(0, x - margin_x)
        y0 = max(0, y - margin_y)
        x1 = min(frame.shape[1], x + w + margin_x)
        y1 = min(frame.shape[0], y + h + margin_y)
        window = frame[y0:y1, x0:x1]
        if window.shape[0] < h or window.shape[1] < w:
            return None
        result = cv2.matchTemplate(window.astype(np.float32),
                                   template.astype(np.float32), cv2.TM_CCOEFF_NORMED)
        _, peak, _, loc = cv2.minMaxLoc(result)
        if peak < self.min_correlation:
            return None
        return (x0 + loc[0], y0 + loc[1], w, h)


def detect_and_track(frames, detector=None, tracker=None, redetect_every=10):
    """Cascade detection on scheduled frames, template tracking in between.

    Frames where neither succeeds are marked invalid; a clip with no valid
    frame at all raises NoLipRegionError.
    """
    if not frames:
        raise ValueError("no frames to process")
    detector = detector or HaarLikeLipDetector()
    tracker = tracker or TemplateTracker()

    n = len(frames)
    boxes = np.zeros((n, 4), dtype=np.int64)
    valid = np.zeros(n, dtype=bool)
    template = None
    last_box = None
    for i, frame in enumerate(frames):
        box = None
        if i % redetect_every == 0 or template is None:
            box = detector.detect(frame)
        if box is None and template is not None and last_box is not None:
            box = tracker.track(frame, template, last_box)
        if box is not None:
            x, y, w, h = box
            x = int(np.clip(x, 0, frame.shape[1] - 1))
            y = int(np.clip(y, 0, frame.shape[0] - 1))
            w = int(min(w, frame.shape[1] - x))
            h = int(min(h, frame.shape[0] - y))
            boxes[i] = (x, y, w, h)
            valid[i] = True
            last_box = (x, y, w, h)
            template = frame[y : y + h, x : x + w].copy()
    if not valid.any():
        raise NoLipRegionError("no lip region found in any frame")
    return RoiTrack(boxes=boxes, valid=valid)
