import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

from pydantic import BaseModel, ValidationError

from ..exceptions import InvalidInputError, MissingDataError
from ..models import BoundingBox, EventSpec, ImageRecord, SelectionResult, UtilityForm

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0
DEFAULT_PHI = 0.25
DEFAULT_CLOUD_MAX = 0.5


class ManifestEntry(BaseModel):
    """One line of the image manifest (JSON Lines)."""

    image_id: str
    capture_time: str
    min_e: float
    min_n: float
    max_e: float
    max_n: float
    zone: int
    hemisphere: str = "north"
    cloud_fraction: float
    bands: List[str]
    pixel_size_m: float
    path: str


class ManifestRejection(BaseModel):
    line: int
    image_id: Optional[str] = None
    reason: str
    detail: str = ""


class CatalogLoad(BaseModel):
    records: List[ImageRecord] = []
    rejects: List[ManifestRejection] = []


def _parse_time(text: str) -> datetime:
    parsed = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if parsed.tzinfo is None:
        return parsed.replace(tzinfo=timezone.utc)
    return parsed.astimezone(timezone.utc)


def load_manifest(path: Union[str, Path]) -> CatalogLoad:
    """
    Load and validate the image manifest.

    Raster paths are resolved against the manifest directory; entries whose
    raster is missing, whose timestamp does not parse or whose fields violate
    ImageRecord are rejected with a reason and logged.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingDataError(f"manifest {path} not found", code="missing-file")

    result = CatalogLoad()

    def reject(line: int, reason: str, image_id: Optional[str] = None, detail: str = "") -> None:
        logger.warning(f"line={line} image_id={image_id} reason={reason} {detail}".rstrip())
        result.rejects.append(ManifestRejection(line=line, image_id=image_id, reason=reason, detail=detail))

    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            entry = ManifestEntry.model_validate(json.loads(raw))
        except (json.JSONDecodeError, ValidationError) as e:
            reject(number, "malformed-entry", detail=str(e).splitlines()[0])
            continue
        try:
            capture_time = _parse_time(entry.capture_time)
        except ValueError:
            reject(number, "bad-timestamp", entry.image_id)
            continue
        raster_path = Path(entry.path)
        if not raster_path.is_absolute():
            raster_path = path.parent / raster_path
        if not raster_path.is_file():
            reject(number, "missing-file", entry.image_id, str(raster_path))
            continue
        try:
            record = ImageRecord(
                image_id=entry.image_id,
                capture_time=capture_time,
                footprint=BoundingBox(
                    min_e=entry.min_e, min_n=entry.min_n, max_e=entry.max_e, max_n=entry.max_n,
                    zone=entry.zone, hemisphere=entry.hemisphere,
                ),
                cloud_fraction=entry.cloud_fraction,
                band_layout=entry.bands,
                pixel_size_m=entry.pixel_size_m,
                file_path=str(raster_path.resolve()),
            )
        except ValidationError as e:
            reject(number, "invalid-record", entry.image_id, str(e).splitlines()[0])
            continue
        result.records.append(record)

    logger.info(f"catalog {path.name}: {len(result.records)} images, {len(result.rejects)} rejected")
    return result


def manifest_line(record: ImageRecord) -> str:
    entry = ManifestEntry(
        image_id=record.image_id,
        capture_time=record.capture_time.strftime("%Y-%m-%dT%H:%M:%SZ"),
        min_e=record.footprint.min_e,
        min_n=record.footprint.min_n,
        max_e=record.footprint.max_e,
        max_n=record.footprint.max_n,
        zone=record.footprint.zone,
        hemisphere=record.footprint.hemisphere.value,
        cloud_fraction=record.cloud_fraction,
        bands=list(record.band_layout),
        pixel_size_m=record.pixel_size_m,
        path=record.file_path,
    )
    return json.dumps(entry.model_dump(), sort_keys=True)


def serialize_manifest(records: Iterable[ImageRecord]) -> str:
    return "".join(manifest_line(record) + "\n" for record in records)


def coverage_fraction(img: ImageRecord, roi: BoundingBox) -> float:
    """Share of the ROI area covered by the image footprint."""
    if not img.footprint.same_crs(roi):
        raise InvalidInputError(f"image {img.image_id} is in zone {img.footprint.zone}, ROI in zone {roi.zone}")
    overlap = img.footprint.intersection(roi)
    if overlap is None:
        return 0.0
    return min(max(overlap.area / roi.area, 0.0), 1.0)


def days_from_event(img: ImageRecord, evt: EventSpec) -> float:
    return abs((img.capture_time - evt.event_time).total_seconds()) / SECONDS_PER_DAY


def utility(
    img: ImageRecord,
    evt: EventSpec,
    phi: float = DEFAULT_PHI,
    form: UtilityForm = UtilityForm.CALIBRATED,
) -> float:
    """
    Coverage/recency tradeoff. The calibrated form charges phi per day of
    separation (phi = 0.25: 25 points of coverage are worth one day); the
    printed form divides the separation by phi instead.
    """
    if not phi > 0:
        raise InvalidInputError(f"phi must be positive, got {phi}")
    coverage = coverage_fraction(img, evt.roi)
    days = days_from_event(img, evt)
    if form == UtilityForm.PRINTED:
        return coverage - days / phi
    return coverage - phi * days


def select_image_pair(
    catalog: Sequence[ImageRecord],
    evt: EventSpec,
    cloud_max: float = DEFAULT_CLOUD_MAX,
    phi: float = DEFAULT_PHI,
    form: UtilityForm = UtilityForm.CALIBRATED,
) -> SelectionResult:
    """
    Best image strictly before the event and best image at or after it.

    Eligible images have cloud_fraction < cloud_max and overlap the ROI. Ties
    on utility go to the image closer in time, then to the smaller image_id.
    Images projected in another zone than the ROI are skipped as other-zone.
    """
    skipped = {}
    eligible = []
    for img in catalog:
        if not img.footprint.same_crs(evt.roi):
            logger.warning(f"image_id={img.image_id} reason=other-zone")
            skipped[img.image_id] = "other-zone"
        elif img.cloud_fraction < cloud_max and coverage_fraction(img, evt.roi) > 0:
            eligible.append(img)

    def best(candidates: List[ImageRecord]) -> tuple:
        scored = [(utility(img, evt, phi, form), img) for img in candidates]
        u, img = min(scored, key=lambda pair: (-pair[0], days_from_event(pair[1], evt), pair[1].image_id))
        return img, u

    before = [img for img in eligible if img.capture_time < evt.event_time]
    after = [img for img in eligible if img.capture_time >= evt.event_time]
    if not before:
        raise MissingDataError(f"no eligible image before {evt.event_time.isoformat()}", code="no-before-image")
    if not after:
        raise MissingDataError(f"no eligible image at or after {evt.event_time.isoformat()}", code="no-after-image")

    before_img, u_before = best(before)
    after_img, u_after = best(after)
    logger.info(
        f"selected {before_img.image_id} (u={u_before:.4f}) and {after_img.image_id} (u={u_after:.4f}) "
        f"from {len(eligible)} eligible of {len(catalog)} images"
    )
    return SelectionResult(
        before=before_img,
        after=after_img,
        u_before=u_before,
        u_after=u_after,
        candidates_considered=len(eligible),
        skipped=skipped,
    )
