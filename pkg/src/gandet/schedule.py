"""Learning-rate schedules: reduce-on-plateau (primary) and fixed two-phase."""

from dataclasses import dataclass, field


@dataclass
class PlateauState:
    """Divide the LR by ``factor`` after ``patience`` non-improving epochs.

    Improvement means strictly lower than the best validation loss so far
    (initialized to +inf, so the first epoch always improves). After the
    schedule has decayed ``max_decays`` times and stalls through one more
    patience window, it signals termination. Epoch indices are 0-based.
    """

    patience: int
    factor: float = 10.0
    max_decays: int = 2
    best: float = float("inf")
    stall: int = 0
    decays_done: int = 0
    multiplier: float = 1.0
    events: list = field(default_factory=list)  # (epoch, new multiplier)
    _epoch: int = -1

    def update(self, val_loss):
        """Feed one epoch's validation loss; returns (multiplier, terminate)."""
        self._epoch += 1
        if val_loss < self.best:
            self.best = val_loss
            self.stall = 0
            return self.multiplier, False
        self.stall += 1
        if self.stall < self.patience:
            return self.multiplier, False
        if self.decays_done >= self.max_decays:
            return self.multiplier, True
        self.decays_done += 1
        self.stall = 0
        self.multiplier /= self.factor
        self.events.append((self._epoch, self.multiplier))
        return self.multiplier, False


def lr_plateau_step(history, state):
    """Functional wrapper: feed the latest entry of ``history`` into ``state``."""
    if not history:
        raise ValueError("history must be non-empty")
    return state.update(history[-1])


@dataclass
class TwoPhaseState:
    """Fixed schedule: full LR for ``phase1`` epochs, LR/factor for ``phase2``."""

    phase1: int = 20
    phase2: int = 10
    factor: float = 10.0
    events: list = field(default_factory=list)
    _epoch: int = -1

    def update(self, val_loss):
        self._epoch += 1
        if self._epoch < self.phase1:
            return 1.0, False
        if self._epoch == self.phase1:
            self.events.append((self._epoch, 1.0 / self.factor))
        done = self._epoch >= self.phase1 + self.phase2 - 1
        return 1.0 / self.factor, done
