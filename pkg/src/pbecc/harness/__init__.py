from .scenario import Scenario, ScenarioError, bundled_scenarios, load_scenario, parse_scenario

__all__ = ["Scenario", "ScenarioError", "bundled_scenarios", "load_scenario", "parse_scenario"]
