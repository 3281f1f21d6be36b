import os
from dataclasses import dataclass


@dataclass(frozen=True)
class Settings:
    log_level: str = "INFO"
    knapsack_max_capacity: int = 64
    oracle_max_assignments: int = 10_000_000
    oracle_max_scenarios: int = 1_000_000
    oracle_max_states: int = 1_000_000
    rounding_max_steps: int = 100_000
    default_jobs: int = 1

    @classmethod
    def from_env(cls) -> "Settings":
        """Read settings from the environment (call load_dotenv() first)."""
        return cls(
            log_level=os.getenv("ADCELL_LOG_LEVEL", "INFO").upper(),
            knapsack_max_capacity=int(os.getenv("ADCELL_KNAPSACK_MAX_CAPACITY", "64")),
            oracle_max_assignments=int(os.getenv("ADCELL_ORACLE_MAX_ASSIGNMENTS", "10000000")),
            oracle_max_scenarios=int(os.getenv("ADCELL_ORACLE_MAX_SCENARIOS", "1000000")),
            oracle_max_states=int(os.getenv("ADCELL_ORACLE_MAX_STATES", "1000000")),
            rounding_max_steps=int(os.getenv("ADCELL_ROUNDING_MAX_STEPS", "100000")),
            default_jobs=int(os.getenv("ADCELL_DEFAULT_JOBS", "1")),
        )


# Singleton instance, refreshed by the entry point after load_dotenv()
settings = Settings.from_env()


def reload_settings() -> Settings:
    global settings
    settings = Settings.from_env()
    return settings
