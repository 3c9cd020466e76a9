import logging

from hypothesis import HealthCheck, settings

# derandomized so every run exercises the same cases
settings.register_profile(
    "ci", derandomize=True, deadline=None, max_examples=100,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")

logging.getLogger("egmarket").setLevel(logging.ERROR)
