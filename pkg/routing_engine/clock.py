"""Virtual clock handing out integer millisecond timestamps to the simulator."""


class VirtualClock:
    """
    Virtual time decoupled from the wall clock.

    Time only moves when advanced explicitly and never moves backwards.
    """

    def __init__(self, start_ms: int = 0):
        self._now_ms = int(start_ms)

    def now_ms(self) -> int:
        return self._now_ms

    def advance_to(self, t_ms: int) -> int:
        if t_ms > self._now_ms:
            self._now_ms = int(t_ms)
        return self._now_ms
