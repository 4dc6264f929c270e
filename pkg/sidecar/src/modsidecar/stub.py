"""Stub model implementations: deterministic procedural outputs, zero downloads.

The stub exists so the full contract suite and the orchestrator integration
tests run on CI without GPUs or model weights. Every output is a pure function
of the request inputs.
"""

from __future__ import annotations

import hashlib
import io
import math
import wave

import numpy as np
from PIL import Image
from scipy import linalg


def digest(*parts: bytes | str) -> bytes:
    h = hashlib.sha256()
    for part in parts:
        if isinstance(part, str):
            part = part.encode("utf-8")
        h.update(part)
        h.update(b"\x00")
    return h.digest()


def stub_image(prompt: str, seed: int, width: int, height: int) -> bytes:
    d = digest("stub-image", prompt, str(seed))
    img = Image.new("RGB", (width, height), (d[0], d[1], d[2]))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def stub_audio(prompt: str, seed: int, duration_seconds: float, sample_rate_hz: int) -> bytes:
    d = digest("stub-audio", prompt, str(seed))
    freq = 80.0 + float(int.from_bytes(d[0:2], "big") % 800)
    phase = (d[4] / 255.0) * 2.0 * math.pi
    n_samples = int(round(duration_seconds * sample_rate_hz))
    t = np.arange(n_samples, dtype=np.float64) / sample_rate_hz
    signal = (0.4 * np.sin(2.0 * math.pi * freq * t + phase) * 32767).astype("<i2")
    buf = io.BytesIO()
    with wave.open(buf, "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(sample_rate_hz)
        handle.writeframes(signal.tobytes())
    return buf.getvalue()


EMBED_DIM = 128


def stub_embedding(content: bytes) -> list[float]:
    """Unit vector seeded by the content digest; identical bytes embed identically."""
    d = digest("stub-embed", content)
    rng = np.random.default_rng(int.from_bytes(d[:8], "big"))
    values = rng.standard_normal(EMBED_DIM)
    values = values / np.linalg.norm(values)
    return [float(v) for v in values]


class WavFormatError(ValueError):
    pass


def read_wav(data: bytes) -> tuple[np.ndarray, int]:
    try:
        with wave.open(io.BytesIO(data), "rb") as handle:
            rate = handle.getframerate()
            frames = handle.readframes(handle.getnframes())
            width = handle.getsampwidth()
            channels = handle.getnchannels()
    except (wave.Error, EOFError) as exc:
        raise WavFormatError(f"not a readable WAV payload: {exc}") from exc
    if width != 2:
        raise WavFormatError(f"expected 16-bit samples, got {8 * width}-bit")
    samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
    if channels > 1:
        samples = samples.reshape(-1, channels).mean(axis=1)
    return samples, rate


PESQ_MIN, PESQ_MAX = -0.5, 4.5


def stub_pesq(reference: bytes, degraded: bytes) -> float:
    """Proxy score in PESQ's range: the scale maximum iff the signals match.

    Raises WavFormatError on undecodable audio or rate/length mismatch.
    """
    ref, ref_rate = read_wav(reference)
    deg, deg_rate = read_wav(degraded)
    if ref_rate != deg_rate:
        raise WavFormatError(f"sample rate mismatch: {ref_rate} vs {deg_rate}")
    if len(ref) != len(deg):
        raise WavFormatError(f"length mismatch: {len(ref)} vs {len(deg)} samples")
    if len(ref) == 0:
        raise WavFormatError("empty audio")
    rel = float(np.linalg.norm(ref - deg) / (np.linalg.norm(ref) + 1e-12))
    score = PESQ_MAX - 5.0 * min(1.0, rel)
    return max(PESQ_MIN, min(PESQ_MAX, score))


class ImageFormatError(ValueError):
    pass


_FID_SIDE = 8


def _image_features(data: bytes) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data)).convert("RGB")
    except Exception as exc:  # PIL raises a zoo of types on bad input
        raise ImageFormatError(f"not a decodable image: {exc}") from exc
    small = img.resize((_FID_SIDE, _FID_SIDE))
    return np.asarray(small, dtype=np.float64).reshape(-1) / 255.0


def stub_fid(generated: list[bytes], references: list[bytes]) -> float:
    """Frechet distance between Gaussian fits of cheap pixel features.

    Identical lists score (numerically) zero; disjoint sets score positive.
    """
    gen = np.stack([_image_features(b) for b in generated])
    ref = np.stack([_image_features(b) for b in references])
    mu_g, mu_r = gen.mean(axis=0), ref.mean(axis=0)
    eye = np.eye(gen.shape[1]) * 1e-6
    cov_g = np.cov(gen, rowvar=False) + eye if len(gen) > 1 else eye.copy()
    cov_r = np.cov(ref, rowvar=False) + eye if len(ref) > 1 else eye.copy()
    covmean = linalg.sqrtm(cov_g @ cov_r)
    if np.iscomplexobj(covmean):
        covmean = covmean.real
    diff = mu_g - mu_r
    value = float(diff @ diff + np.trace(cov_g + cov_r - 2.0 * covmean))
    if value < -1e-6:
        raise ValueError(f"frechet distance computed negative: {value}")
    return max(0.0, value)
