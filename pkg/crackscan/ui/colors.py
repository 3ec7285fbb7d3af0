"""
Color definitions for crackscan reports
"""

# Color schemes
COLOR_SCHEME = {
    "concrete": {
        "primary": "bright_cyan",
        "secondary": "bright_magenta",
        "accent": "bright_yellow",
        "success": "bright_green",
        "error": "bright_red",
        "warning": "yellow",
        "info": "bright_blue",
    },
}

# Table styles per scheme
THEMES = {
    "concrete": {
        "heading": "bold bright_cyan underline",
        "stage": "bold bright_magenta",
        "value": "bright_white",
        "flagged": "bold bright_red",
        "border": "bright_blue",
    },
}
