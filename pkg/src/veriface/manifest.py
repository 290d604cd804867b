"""Dataset manifest: CSV records binding images to subjects, protocol roles,
and manually located eye coordinates."""

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

from .errors import ManifestError
from .imaging import GeometryConfig, align_and_crop, load_image

MANIFEST_FIELDS = ["path", "subject_id", "session", "role", "lx", "ly", "rx", "ry"]

CLIENT_ROLES = ("client_train", "client_eval", "client_test")
IMPOSTOR_ROLES = ("impostor_eval", "impostor_test")
ROLES = CLIENT_ROLES + IMPOSTOR_ROLES


@dataclass(frozen=True)
class ManifestRecord:
    """One image: its file, owner, session, protocol role, and eye pixels.

    Eye coordinates are (x, y) = (column, row) in source-image pixels.
    """

    path: str
    subject_id: str
    session: int
    role: str
    lx: float
    ly: float
    rx: float
    ry: float


def load_manifest(path) -> list[ManifestRecord]:
    """Parse and validate a manifest CSV."""
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ManifestError(f"{path}: empty manifest") from None
            if header != MANIFEST_FIELDS:
                raise ManifestError(
                    f"{path}: header {header} != expected {MANIFEST_FIELDS}")
            records = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(MANIFEST_FIELDS):
                    raise ManifestError(f"{path}:{lineno}: expected "
                                        f"{len(MANIFEST_FIELDS)} fields, got {len(row)}")
                p, subject, session, role, lx, ly, rx, ry = row
                if role not in ROLES:
                    raise ManifestError(f"{path}:{lineno}: unknown role {role!r}")
                try:
                    records.append(ManifestRecord(
                        path=p, subject_id=subject, session=int(session),
                        role=role, lx=float(lx), ly=float(ly),
                        rx=float(rx), ry=float(ry)))
                except ValueError as exc:
                    raise ManifestError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    return records


def save_manifest(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for r in records:
            writer.writerow([r.path, r.subject_id, r.session, r.role,
                             repr(r.lx), repr(r.ly), repr(r.rx), repr(r.ry)])


def training_digest(records) -> str:
    """Digest over the client_train rows only, in canonical order.

    Restricting the digest to training rows keeps trained model bytes
    independent of evaluation/test rows, so holding back or adding test
    data never changes a model.
    """
    rows = sorted((r.path, r.subject_id, r.session, r.lx, r.ly, r.rx, r.ry)
                  for r in records if r.role == "client_train")
    blob = "\n".join(repr(row) for row in rows).encode()
    return hashlib.sha256(blob).hexdigest()


def load_face_sample(record: ManifestRecord, geo: GeometryConfig, base_dir):
    """Load, align, and crop the image a manifest row points at."""
    img = load_image(Path(base_dir) / record.path)
    return align_and_crop(img, (record.ly, record.lx), (record.ry, record.rx),
                          geo, subject_id=record.subject_id,
                          session=record.session)
