#!/usr/bin/env python3
"""
Startup script for the armaxlab HTTP API.
Handles configuration loading and application startup.
"""

import sys
from pathlib import Path

import uvicorn

# Add the current directory to Python path
current_dir = Path(__file__).parent
sys.path.insert(0, str(current_dir))

try:
    from armaxlab.config import settings
    print(f"Starting {settings.service_name} {settings.service_version}...")
    print(f"Host: {settings.service_host}")
    print(f"Port: {settings.service_port}")
    print(f"Debug: {settings.debug}")
    print(f"Log Level: {settings.log_level}")
    print(f"Environment: {settings.environment}")
    print(f"Seed workers: {settings.max_workers}")
    print(f"Health Check: http://{settings.service_host}:{settings.service_port}/health")
    print("-" * 50)

    uvicorn.run(
        "armaxlab.api:app",
        host=settings.service_host,
        port=settings.service_port,
        reload=settings.debug,
        log_level=settings.log_level.lower(),
        access_log=True
    )

except ImportError as e:
    print(f"Failed to import required modules: {e}")
    print("Make sure all dependencies are installed: pip install -r requirements.txt")
    sys.exit(1)

except Exception as e:
    print(f"Failed to start armaxlab: {e}")
    sys.exit(1)
