"""
Alert System Module
Flags run conditions a reader of the report must know about
"""
import logging
import math

from config import LOW_SWAP_ACCEPTANCE
from model import theorem_applies

logger = logging.getLogger(__name__)


def _alert(kind, message, **details):
    return {"type": kind, "message": message, **details}


def no_theorem_alert(p):
    """Odd p >= 3: quantities are computed but no limit is claimed"""
    if theorem_applies(p):
        return []
    return [_alert(
        "NO_THEOREM",
        f"concentration of H_{p} is only proved for p = 1 and even p; values for p={p} carry no limit claim",
        p=p,
    )]


def no_theorem_alerts(degrees):
    """One NO_THEOREM alert per odd degree >= 3 among `degrees`"""
    return [alert for p in sorted(set(degrees)) for alert in no_theorem_alert(p)]


def swap_acceptance_alerts(rates, threshold=LOW_SWAP_ACCEPTANCE):
    """One alert per adjacent ladder pair whose mean swap acceptance falls below threshold"""
    alerts = []
    for pair, rate in enumerate(rates):
        if math.isnan(rate):
            continue
        if rate < threshold:
            alerts.append(_alert(
                "LOW_SWAP_ACCEPTANCE",
                f"ladder pair ({pair}, {pair + 1}) accepted {rate:.3f} of swaps (< {threshold}); add rungs",
                pair=pair,
                rate=float(rate),
            ))
    return alerts


def surrogate_alert(scan):
    """The finite-N decay comparison stands in for the N -> infinity limit"""
    status = "holds" if scan.surrogate_decreasing else "fails"
    return [_alert(
        "SURROGATE",
        f"decay surrogate (total at largest N < total at smallest N) {status}; it does not verify the limit",
        holds=scan.surrogate_decreasing,
    )]


def failed_check_alerts(reports):
    """Inequality reports whose bound was violated beyond tolerance"""
    return [
        _alert("CHECK_FAILED", f"{report.name}: lhs {report.lhs:.6g} exceeds rhs {report.rhs:.6g}",
               check=report.name, slack=float(report.slack))
        for report in reports if not report.holds
    ]


def send_run_alerts(alerts):
    """Log every alert; they are also written to the run metadata"""
    if not alerts:
        logger.info("No alerts raised for this run")
        return alerts
    for alert in alerts:
        logger.warning(f"ALERT {alert['type']}: {alert['message']}")
    return alerts
