import random

import pytest
from hypothesis import settings

from tau_toolkit.core import (
    AnomalyClass,
    DatasetManifest,
    DecomposedAnnotation,
    EnvAnnotation,
    IdentityAnnotation,
    LocationAnnotation,
    QACategory,
    QAPair,
    VideoClip,
)

# brute-force oracles are slow by design; wall-clock deadlines only add flakiness
settings.register_profile("default", deadline=None)
settings.load_profile("default")

WORDS = ("vehicle lane car truck suv turns enters exits stops brakes yields merges roundabout "
         "north south east west entry exit red white black blue silver pedestrian crossing slow fast").split()


def _sentence(rng, n):
    return " ".join(rng.choice(WORDS) for _ in range(n)).capitalize() + "."


def random_annotation(rng: random.Random, duration: float = 30.0, full: bool = False) -> DecomposedAnnotation:
    """Random decomposed annotation. ``full`` specifies every field."""

    def maybe(value):
        return value if full or rng.random() < 0.7 else None

    env = EnvAnnotation(
        time_of_day=maybe(rng.choice(["day", "night", "dusk"])),
        weather=maybe(rng.choice(["clear", "rain", "snow", "fog"])),
        surface=maybe(rng.choice(["dry", "wet", "icy"])),
        road=maybe(rng.choice(["single-lane roundabout", "two-lane roundabout"])),
    )
    ident = IdentityAnnotation(
        vehicle_type=maybe(rng.choice(["sedan", "suv", "pickup truck", "bus"])),
        color=maybe(rng.choice(["red", "white", "black", "silver"])),
    )
    loc = LocationAnnotation(
        frame_position=maybe(tuple(rng.sample(["top-left", "center", "bottom-right", "top-right"], rng.randint(1, 2)))),
        environment_position=maybe(tuple(rng.sample(["north entry", "circulating lane", "east exit"], rng.randint(1, 2)))),
    )
    start = rng.uniform(0, duration / 2)
    return DecomposedAnnotation(
        env=env,
        identity=ident,
        location=loc,
        description=_sentence(rng, rng.randint(6, 14)),
        reasoning=_sentence(rng, rng.randint(4, 10)),
        time_window=(start, rng.uniform(start + 0.5, duration)),
        summary=_sentence(rng, rng.randint(15, 30)),
    )


def build_manifest(class_counts: dict, n_sites: int = 28, total_qa: int = 0, seed: int = 0) -> DatasetManifest:
    """Synthetic manifest with the given per-class clip counts."""
    rng = random.Random(seed)
    clips, annotations = [], {}
    i = 0
    for cls, count in class_counts.items():
        for _ in range(count):
            cid = f"clip{i:04d}"
            dur = round(rng.uniform(5, 120), 2)
            clips.append(VideoClip(cid, f"site{i % n_sites + 1:02d}", dur, AnomalyClass(cls), f"videos/{cid}.mp4"))
            annotations[cid] = random_annotation(rng, dur)
            i += 1
    categories = list(QACategory)
    qa = [
        QAPair(clips[k % len(clips)].clip_id, categories[k % len(categories)], f"Question {k}?", f"Answer {k}.")
        for k in range(total_qa)
    ]
    return DatasetManifest(clips, annotations, qa)


@pytest.fixture(scope="session")
def full_manifest():
    """342 clips over 28 sites, 276 abnormal and 66 normal, 2064 QA pairs."""
    return build_manifest({"A": 66, "B": 100, "C": 96, "D": 80}, n_sites=28, total_qa=2064)


@pytest.fixture
def test_manifest():
    """42 clips: 8 normal, 34 abnormal."""
    return build_manifest({"A": 8, "B": 12, "C": 12, "D": 10}, n_sites=10, seed=3)


# --- acceptance reporting: one PASS/FAIL line per criterion ---

_acceptance_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    if report.when == "setup" and report.passed:
        return
    prev = _acceptance_results.get(number, (title, True))
    _acceptance_results[number] = (title, prev[1] and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance_results):
        title, ok = _acceptance_results[number]
        terminalreporter.write_line(f"AC{number:>2} {'PASS' if ok else 'FAIL'}  {title}")
