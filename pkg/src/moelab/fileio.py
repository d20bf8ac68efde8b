"""On-disk formats: datasets, checkpoints, metric logs, reports.

All writers go through an atomic temp-file + rename so a crashed run never
leaves a partial file behind.

Dataset binary layout (little-endian throughout):
    magic   8 bytes  b"MOELABDS"
    version u32      1
    d, P, K, n       4 x i64
    sigma_p          f64
    n rows of:
        y, k, k_prime, epsilon   4 x i64
        alpha, beta, gamma       3 x f64
        patches                  P*d x f64 (row-major, patch index fastest
                                 varying over d)
        patch_roles              P x i64

Checkpoint binary layout:
    magic   8 bytes  b"MOELABCK"
    version u32      1
    M, J, d, t       4 x i64
    activation       16 bytes, ascii padded with NUL
    expert weights   M*J*d x f64 (row-major)
    router theta     d*M x f64 (row-major)
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
import tempfile
from dataclasses import asdict
from typing import Iterable, Sequence

import numpy as np

from .experts import ExpertBank, get_activation
from .gating import RouterWeights
from .metrics import EvalReport
from .model import MoEModel
from .signals import Dataset
from .training import IterationLog

DATASET_MAGIC = b"MOELABDS"
CHECKPOINT_MAGIC = b"MOELABCK"
_DS_HEADER = struct.Struct("<8sIqqqqd")
_CK_HEADER = struct.Struct("<8sIqqqq16s")


class FileFormatError(ValueError):
    """Raised when a file fails magic/shape validation on read."""


def atomic_write_bytes(path: str, data: bytes) -> None:
    _atomic_write(path, data, binary=True)


def atomic_write_text(path: str, text: str) -> None:
    _atomic_write(path, text, binary=False)


def _atomic_write(path: str, payload, binary: bool) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb" if binary else "w") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dataset_row_dtype(P: int, d: int) -> np.dtype:
    return np.dtype(
        [
            ("y", "<i8"),
            ("k", "<i8"),
            ("k_prime", "<i8"),
            ("epsilon", "<i8"),
            ("alpha", "<f8"),
            ("beta", "<f8"),
            ("gamma", "<f8"),
            ("patches", "<f8", (P, d)),
            ("roles", "<i8", (P,)),
        ]
    )


def save_dataset_bin(dataset: Dataset, path: str) -> None:
    n, P, d = dataset.patches.shape
    header = _DS_HEADER.pack(DATASET_MAGIC, 1, d, P, dataset.K, n, dataset.sigma_p)
    rows = np.empty(n, dtype=_dataset_row_dtype(P, d))
    rows["y"] = dataset.y
    rows["k"] = dataset.k
    rows["k_prime"] = dataset.k_prime
    rows["epsilon"] = dataset.epsilon
    rows["alpha"] = dataset.alpha
    rows["beta"] = dataset.beta
    rows["gamma"] = dataset.gamma
    rows["patches"] = dataset.patches
    rows["roles"] = dataset.patch_roles
    atomic_write_bytes(path, header + rows.tobytes())


def load_dataset_bin(path: str) -> Dataset:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _DS_HEADER.size:
        raise FileFormatError(f"{path}: truncated dataset header")
    magic, version, d, P, K, n, sigma_p = _DS_HEADER.unpack_from(blob, 0)
    if magic != DATASET_MAGIC:
        raise FileFormatError(f"{path}: not a dataset file (bad magic {magic!r})")
    if version != 1:
        raise FileFormatError(f"{path}: unsupported dataset version {version}")
    dtype = _dataset_row_dtype(P, d)
    expected = _DS_HEADER.size + n * dtype.itemsize
    if len(blob) != expected:
        raise FileFormatError(f"{path}: expected {expected} bytes, found {len(blob)}")
    rows = np.frombuffer(blob, dtype=dtype, count=n, offset=_DS_HEADER.size)
    return Dataset(
        patches=rows["patches"].copy(),
        y=rows["y"].copy(),
        k=rows["k"].copy(),
        k_prime=rows["k_prime"].copy(),
        epsilon=rows["epsilon"].copy(),
        alpha=rows["alpha"].copy(),
        beta=rows["beta"].copy(),
        gamma=rows["gamma"].copy(),
        patch_roles=rows["roles"].copy(),
        K=K,
        sigma_p=sigma_p,
    )


def save_dataset_csv(dataset: Dataset, path: str) -> None:
    """Interop export; floats are written with round-trip precision."""
    n, P, d = dataset.patches.shape
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["# d", d, "P", P, "K", dataset.K, "n", n, "sigma_p", repr(float(dataset.sigma_p))])
    header = ["y", "k", "k_prime", "epsilon", "alpha", "beta", "gamma"]
    header += [f"role_{p}" for p in range(P)]
    header += [f"x{p}_{j}" for p in range(P) for j in range(d)]
    writer.writerow(header)
    flat = dataset.patches.reshape(n, P * d)
    for i in range(n):
        row = [
            int(dataset.y[i]), int(dataset.k[i]), int(dataset.k_prime[i]), int(dataset.epsilon[i]),
            repr(float(dataset.alpha[i])), repr(float(dataset.beta[i])), repr(float(dataset.gamma[i])),
        ]
        row += [int(r) for r in dataset.patch_roles[i]]
        row += [repr(float(v)) for v in flat[i]]
        writer.writerow(row)
    atomic_write_text(path, buf.getvalue())


def load_dataset_csv(path: str) -> Dataset:
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            meta_row = next(reader)
            next(reader)  # column header
        except StopIteration:
            raise FileFormatError(f"{path}: empty dataset CSV") from None
        if not meta_row or meta_row[0] != "# d":
            raise FileFormatError(f"{path}: missing metadata row")
        d, P, K, n = int(meta_row[1]), int(meta_row[3]), int(meta_row[5]), int(meta_row[7])
        sigma_p = float(meta_row[9])
        rows = list(reader)
    if len(rows) != n:
        raise FileFormatError(f"{path}: expected {n} rows, found {len(rows)}")
    y = np.empty(n, dtype=np.int64)
    k = np.empty(n, dtype=np.int64)
    k_prime = np.empty(n, dtype=np.int64)
    epsilon = np.empty(n, dtype=np.int64)
    alpha = np.empty(n)
    beta = np.empty(n)
    gamma = np.empty(n)
    roles = np.empty((n, P), dtype=np.int64)
    patches = np.empty((n, P * d))
    for i, row in enumerate(rows):
        if len(row) != 7 + P + P * d:
            raise FileFormatError(f"{path}: row {i} has {len(row)} fields")
        y[i], k[i], k_prime[i], epsilon[i] = int(row[0]), int(row[1]), int(row[2]), int(row[3])
        alpha[i], beta[i], gamma[i] = float(row[4]), float(row[5]), float(row[6])
        roles[i] = [int(v) for v in row[7 : 7 + P]]
        patches[i] = [float(v) for v in row[7 + P :]]
    return Dataset(
        patches=patches.reshape(n, P, d),
        y=y, k=k, k_prime=k_prime, epsilon=epsilon,
        alpha=alpha, beta=beta, gamma=gamma,
        patch_roles=roles, K=K, sigma_p=sigma_p,
    )


def save_checkpoint(model: MoEModel, t: int, path: str) -> None:
    bank = model.bank
    act = bank.activation.kind.encode("ascii")
    header = _CK_HEADER.pack(CHECKPOINT_MAGIC, 1, bank.M, bank.J, bank.d, t, act)
    body = bank.weights.astype("<f8").tobytes() + model.router.theta.astype("<f8").tobytes()
    atomic_write_bytes(path, header + body)


def load_checkpoint(path: str) -> tuple[MoEModel, int]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _CK_HEADER.size:
        raise FileFormatError(f"{path}: truncated checkpoint header")
    magic, version, M, J, d, t, act_raw = _CK_HEADER.unpack_from(blob, 0)
    if magic != CHECKPOINT_MAGIC:
        raise FileFormatError(f"{path}: not a checkpoint file (bad magic {magic!r})")
    if version != 1:
        raise FileFormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        activation = get_activation(act_raw.rstrip(b"\x00").decode("ascii"))
    except (ValueError, UnicodeDecodeError):
        raise FileFormatError(f"{path}: unknown activation tag {act_raw!r}") from None
    need = _CK_HEADER.size + (M * J * d + d * M) * 8
    if len(blob) != need:
        raise FileFormatError(f"{path}: expected {need} bytes, found {len(blob)}")
    w = np.frombuffer(blob, dtype="<f8", count=M * J * d, offset=_CK_HEADER.size)
    th = np.frombuffer(blob, dtype="<f8", count=d * M, offset=_CK_HEADER.size + M * J * d * 8)
    bank = ExpertBank(weights=w.reshape(M, J, d).copy(), activation=activation)
    router = RouterWeights(theta=th.reshape(d, M).copy())
    return MoEModel(bank=bank, router=router), t


def metrics_csv_text(logs: Sequence[IterationLog]) -> str:
    if not logs:
        raise ValueError("no log entries to write")
    M = logs[0].grad_norms.shape[0]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = ["t", "loss", "train_acc", "test_acc", "entropy"]
    cols += [f"load_{m + 1}" for m in range(M)]
    cols += [f"gnorm_{m + 1}" for m in range(M)]
    writer.writerow(cols)
    for entry in logs:
        row = [entry.t, repr(float(entry.loss)), repr(float(entry.train_acc)),
               repr(float(entry.test_acc)), repr(float(entry.entropy))]
        row += [repr(float(v)) for v in entry.loads]
        row += [repr(float(v)) for v in entry.grad_norms]
        writer.writerow(row)
    return buf.getvalue()


def save_metrics_csv(logs: Sequence[IterationLog], path: str) -> None:
    atomic_write_text(path, metrics_csv_text(logs))


def load_metrics_csv(path: str) -> list[dict[str, float]]:
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "t" not in reader.fieldnames:
            raise FileFormatError(f"{path}: not a metrics CSV (missing 't' column)")
        out = []
        for row in reader:
            out.append({key: float(val) for key, val in row.items()})
    return out


def save_eval_report(report: EvalReport, path: str) -> None:
    """Flat key=value text form."""
    lines = [f"{key}={value}" for key, value in report.to_dict().items()]
    atomic_write_text(path, "\n".join(lines) + "\n")


def save_eval_report_csv(report: EvalReport, path: str) -> None:
    d = report.to_dict()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(d))
    writer.writerow([d[key] for key in d])
    atomic_write_text(path, buf.getvalue())


def save_lemma_reports(reports: Iterable, path: str) -> None:
    """One JSON record per line."""
    lines = []
    for rep in reports:
        rec = asdict(rep)
        lines.append(json.dumps(rec, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_lemma_reports(path: str) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
