# app/services/capacity_service.py
import logging
from typing import Dict, Mapping, Optional, Sequence

from app.schemas.capacity import CapacityEstimate, DeviceStatus
from app.utils.error_handling import CapacityError

logger = logging.getLogger(__name__)

DEFAULT_RHO = 0.8


class CapacityService:
    """Server-side moving-average estimates of per-device compute and upload speed."""

    @staticmethod
    def update_estimate(
        prev: Optional[CapacityEstimate], obs: DeviceStatus, rho: float = DEFAULT_RHO
    ) -> CapacityEstimate:
        """
        Fold one observation into the running estimate.

        The first observation initializes the estimate. Later observations
        must come from a strictly later round; a skipped round simply means
        the previous estimate was carried forward.
        """
        if obs.mu_hat < 0 or obs.beta_hat < 0 or obs.forward_time < 0:
            raise CapacityError(f"device {obs.device_id} reported a negative time")
        if prev is None:
            return CapacityEstimate(
                device_id=obs.device_id,
                round=obs.round,
                mu=obs.mu_hat,
                beta=obs.beta_hat,
                forward_time=obs.forward_time,
                rho=rho,
            )
        if prev.device_id != obs.device_id:
            raise CapacityError(
                f"observation for device {obs.device_id} applied to estimate of device {prev.device_id}"
            )
        if obs.round <= prev.round:
            raise CapacityError(
                f"device {obs.device_id}: observation round {obs.round} does not follow {prev.round}"
            )
        if prev.rho != rho:
            raise CapacityError(f"rho changed from {prev.rho} to {rho} within a run")
        return CapacityEstimate(
            device_id=obs.device_id,
            round=obs.round,
            mu=rho * prev.mu + (1 - rho) * obs.mu_hat,
            beta=rho * prev.beta + (1 - rho) * obs.beta_hat,
            forward_time=rho * prev.forward_time + (1 - rho) * obs.forward_time,
            rho=rho,
        )

    @staticmethod
    def estimate_all(
        history: Mapping[int, Sequence[DeviceStatus]],
        rho: float = DEFAULT_RHO,
        device_ids: Optional[Sequence[int]] = None,
    ) -> Dict[int, CapacityEstimate]:
        """Fold each device's observations in round order; `device_ids` lists who must be present."""
        expected = list(device_ids) if device_ids is not None else sorted(history)
        estimates: Dict[int, CapacityEstimate] = {}
        for device_id in expected:
            observations = history.get(device_id) or []
            if not observations:
                raise CapacityError(f"no status history for device {device_id}")
            estimate = None
            for obs in sorted(observations, key=lambda status: status.round):
                estimate = CapacityService.update_estimate(estimate, obs, rho)
            estimates[device_id] = estimate
        return estimates

    @staticmethod
    def update_all(
        estimates: Mapping[int, CapacityEstimate],
        reports: Sequence[DeviceStatus],
        rho: float = DEFAULT_RHO,
    ) -> Dict[int, CapacityEstimate]:
        """Apply one round of reports; devices that did not report keep their estimate."""
        updated = dict(estimates)
        for obs in reports:
            updated[obs.device_id] = CapacityService.update_estimate(estimates.get(obs.device_id), obs, rho)
        missing = sorted(set(estimates) - {obs.device_id for obs in reports})
        if missing:
            logger.debug(f"no report from devices {missing}; estimates carried forward")
        return updated
