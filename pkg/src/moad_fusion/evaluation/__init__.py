"""Center-distance metrics, scenario runner and experiment suites."""
