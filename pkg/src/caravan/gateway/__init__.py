"""HTTP API and CLI: the system boundary the web UI and headless users share."""
