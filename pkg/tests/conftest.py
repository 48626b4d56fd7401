"""Shared fixtures: the hand-enumerated fixture trace and random-trace
generators used by the property and acceptance tests."""

import random

import pytest

from cmprof import (
    BLOCKED,
    RUNNABLE,
    Sample,
    SchedSwitch,
    SchedWakeup,
    TaskExit,
    TaskNew,
)


@pytest.fixture
def trace_a():
    """Two threads; tid1 runs [0,300), tid2 runs [0,100) and [200,300)
    with a wakeup at 150.  Interval enumeration by hand:

      [0,100)   n=2   (both running)
      [100,150) n=1   (tid2 blocked)
      [150,200) n=2   (tid2 runnable after wakeup)
      [200,300) n=2   (both running)

    cmetric(tid1) = 100/2 + 50/1 + 50/2 + 100/2 = 175
    cmetric(tid2) = 100/2 + 100/2             = 100
    tid1 threads_av = (100*2 + 50*1 + 50*2 + 100*2) / 300 = 550/300
    """
    return [
        TaskNew(0, 1, "w1"),
        TaskNew(0, 2, "w2"),
        SchedSwitch(0, 0, 0, RUNNABLE, 1),
        SchedSwitch(0, 1, 0, RUNNABLE, 2),
        SchedSwitch(100, 1, 2, BLOCKED, 0),
        SchedWakeup(150, 2),
        SchedSwitch(200, 1, 0, RUNNABLE, 2),
        SchedSwitch(300, 0, 1, BLOCKED, 0),
        SchedSwitch(300, 1, 2, BLOCKED, 0),
        TaskExit(300, 1),
        TaskExit(300, 2),
    ]


def random_trace(rng: random.Random, max_threads: int = 8,
                 target_events: int = 400,
                 no_overcommit: bool = False) -> list:
    """Generate a random valid trace by walking a feasible-action chain.

    With no_overcommit=True threads never sit in the runnable-but-not-
    running state for any length of time: wakeups are immediately
    followed by a same-timestamp switch-in, preemption only appears as a
    same-timestamp migration, and handoffs block the departing thread.
    Those traces satisfy the conservation property (total criticality ==
    total duration with at least one active thread).
    """
    ts = 0
    state: dict[int, str] = {}  # tid -> 'i' | 'r' | 'u'
    events: list = []
    next_tid = 1
    dead: list[int] = []

    def advance_time():
        nonlocal ts
        r = rng.random()
        if r < 0.3:
            return  # same-timestamp burst
        ts += rng.randint(1, 100) if r < 0.85 else rng.randint(100, 5000)

    def rand_stack():
        if rng.random() < 0.4:
            return None
        return tuple(rng.randrange(0x1000, 0x20000)
                     for _ in range(rng.randint(1, 24)))

    def rand_cpu():
        return rng.randint(0, 3)

    def spawn():
        nonlocal next_tid
        if dead and rng.random() < 0.2:
            tid = dead.pop()
        else:
            tid = next_tid
            next_tid += 1
        events.append(TaskNew(ts, tid, f"t{tid}"))
        state[tid] = "i"

    while len(events) < target_events:
        advance_time()
        running = sorted(t for t, s in state.items() if s == "u")
        runnable = sorted(t for t, s in state.items() if s == "r")
        inactive = sorted(t for t, s in state.items() if s == "i")

        choices = []
        if len(state) < max_threads:
            choices += ["new"] * 2
        if inactive:
            choices += ["wake"] * 3 + ["switch_in_direct", "exit_idle"]
        if runnable:
            choices += ["switch_in_runnable"] * 3
            if not no_overcommit:
                choices.append("exit_runnable")
        if running:
            choices += ["switch_out"] * 4 + ["sample"] * 3
            choices += ["handoff", "exit_running"]
            choices.append("migrate" if no_overcommit else "preempt")
        if not no_overcommit and state:
            choices.append("redundant_wakeup")
        if not choices:
            choices = ["new"]

        action = rng.choice(choices)
        if action == "new":
            spawn()
        elif action == "exit_idle":
            tid = rng.choice(inactive)
            del state[tid]
            dead.append(tid)
            events.append(TaskExit(ts, tid))
        elif action == "exit_runnable":
            tid = rng.choice(runnable)
            del state[tid]
            dead.append(tid)
            events.append(TaskExit(ts, tid))
        elif action == "exit_running":
            tid = rng.choice(running)
            del state[tid]
            dead.append(tid)
            events.append(TaskExit(ts, tid))
        elif action == "wake":
            tid = rng.choice(inactive)
            events.append(SchedWakeup(ts, tid))
            if no_overcommit or rng.random() < 0.5:
                events.append(SchedSwitch(ts, rand_cpu(), 0, RUNNABLE, tid))
                state[tid] = "u"
            else:
                state[tid] = "r"
        elif action == "switch_in_direct":
            tid = rng.choice(inactive)
            events.append(SchedSwitch(ts, rand_cpu(), 0, RUNNABLE, tid))
            state[tid] = "u"
        elif action == "switch_in_runnable":
            tid = rng.choice(runnable)
            events.append(SchedSwitch(ts, rand_cpu(), 0, RUNNABLE, tid))
            state[tid] = "u"
        elif action == "switch_out":
            tid = rng.choice(running)
            events.append(SchedSwitch(ts, rand_cpu(), tid, BLOCKED, 0,
                                      stack=rand_stack()))
            state[tid] = "i"
        elif action == "preempt":
            tid = rng.choice(running)
            events.append(SchedSwitch(ts, rand_cpu(), tid, RUNNABLE, 0,
                                      stack=rand_stack()))
            state[tid] = "r"
        elif action == "migrate":
            tid = rng.choice(running)
            events.append(SchedSwitch(ts, rand_cpu(), tid, RUNNABLE, 0,
                                      stack=rand_stack()))
            events.append(SchedSwitch(ts, rand_cpu(), 0, RUNNABLE, tid))
        elif action == "handoff":
            tid = rng.choice(running)
            nxt = rng.choice(runnable + inactive) if (runnable or inactive) else 0
            events.append(SchedSwitch(ts, rand_cpu(), tid, BLOCKED, nxt,
                                      stack=rand_stack()))
            state[tid] = "i"
            if nxt:
                state[nxt] = "u"
        elif action == "sample":
            pool = running + ([rng.choice(dead)] if dead else [])
            tid = rng.choice(pool)
            events.append(Sample(ts, tid, rng.randrange(0x1000, 0x20000)))
        elif action == "redundant_wakeup":
            events.append(SchedWakeup(ts, rng.choice(sorted(state))))
    return events
