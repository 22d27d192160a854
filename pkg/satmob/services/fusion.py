import logging
from typing import Dict, Optional, Sequence

from ..exceptions import InvalidInputError
from ..models import AnomalyReport, ChangeStats, EventInference, RuleEvaluation, Verdict

logger = logging.getLogger(__name__)

DEFAULT_MIN_CHANGED_FRACTION = 0.05

# (mobility fires, imagery fires) -> verdict
VERDICT_TABLE: Dict[tuple, Verdict] = {
    (False, False): Verdict.NO_EVIDENCE,
    (True, False): Verdict.MOBILITY_ONLY,
    (False, True): Verdict.IMAGERY_ONLY,
    (True, True): Verdict.CORROBORATED,
}


def infer_event(
    anoms: Optional[AnomalyReport],
    stats: Sequence[ChangeStats],
    min_changed_fraction: float = DEFAULT_MIN_CHANGED_FRACTION,
) -> EventInference:
    """
    Conjunctive fusion of the two evidence sources.

    Mobility fires when at least one test-period bucket is flagged; imagery
    fires when any change statistic reaches min_changed_fraction. Missing
    evidence on a side counts as not firing and is noted in the trace.
    """
    trace = []

    has_mobility = anoms is not None
    trace.append(
        RuleEvaluation(
            rule="mobility_evidence_present",
            value=has_mobility,
            detail=f"{anoms.metric_name}, {len(anoms.scored)} {anoms.test_period} buckets" if has_mobility
            else "no anomaly report",
        )
    )
    flagged = anoms.flagged if has_mobility else []
    mobility_fires = len(flagged) > 0
    trace.append(
        RuleEvaluation(
            rule="mobility_anomaly",
            value=mobility_fires,
            detail=f"{len(flagged)} flagged bucket(s)"
            + (": " + ", ".join(b.bucket_start.strftime("%Y-%m-%dT%H:%MZ") for b in flagged) if flagged else ""),
        )
    )

    trace.append(
        RuleEvaluation(
            rule="imagery_evidence_present",
            value=bool(stats),
            detail=", ".join(s.kind.value for s in stats) if stats else "no change statistics",
        )
    )
    imagery_fires = any(s.changed_fraction >= min_changed_fraction for s in stats)
    trace.append(
        RuleEvaluation(
            rule="imagery_change",
            value=imagery_fires,
            detail="; ".join(f"{s.kind.value} changed_fraction {s.changed_fraction:.6g}" for s in stats)
            + f" (minimum {min_changed_fraction:.6g})",
        )
    )

    verdict = VERDICT_TABLE[(mobility_fires, imagery_fires)]
    logger.info(f"verdict {verdict.value}: mobility={mobility_fires} imagery={imagery_fires}")
    return EventInference(
        verdict=verdict,
        mobility_evidence=anoms,
        imagery_evidence=list(stats),
        rule_trace=trace,
        min_changed_fraction=min_changed_fraction,
    )


def replay_rule_trace(trace: Sequence[RuleEvaluation]) -> Verdict:
    """Recompute the verdict from a stored rule trace."""
    values = {entry.rule: entry.value for entry in trace}
    try:
        return VERDICT_TABLE[(values["mobility_anomaly"], values["imagery_change"])]
    except KeyError as e:
        raise InvalidInputError(f"rule trace lacks rule {e.args[0]}") from e
