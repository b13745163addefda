"""
Changelog route for the Terra service
"""

from fastapi import APIRouter
from fastapi.responses import HTMLResponse
from pathlib import Path
import markdown

router = APIRouter()

CHANGELOG_PATH = Path(__file__).parent.parent / "CHANGELOG.md"

PAGE = """<!DOCTYPE html>
<html lang="en">
<head>
    <meta charset="UTF-8">
    <title>Changelog - Terra</title>
    <style>
        body {{ font-family: -apple-system, 'Segoe UI', Roboto, sans-serif; max-width: 900px; margin: 2rem auto; color: #222; }}
        h1 {{ border-bottom: 2px solid #8a6d3b; padding-bottom: 0.5rem; }}
        h2 {{ color: #5a4a2a; margin-top: 2rem; }}
        code {{ background: #f4f1ea; padding: 0.1rem 0.3rem; border-radius: 3px; }}
        table {{ border-collapse: collapse; }}
        td, th {{ border: 1px solid #ccc; padding: 0.3rem 0.6rem; }}
    </style>
</head>
<body>
{body}
<p><a href="/docs">API docs</a> | <a href="/health">Health</a></p>
</body>
</html>
"""


@router.get("/changelog", response_class=HTMLResponse)
async def get_changelog():
    """
    Display the changelog in a formatted HTML page
    """
    if not CHANGELOG_PATH.exists():
        return HTMLResponse(content="<h1>Changelog not found</h1>", status_code=404)

    with open(CHANGELOG_PATH, 'r', encoding='utf-8') as f:
        markdown_content = f.read()

    html_content = markdown.markdown(
        markdown_content,
        extensions=['extra', 'codehilite', 'toc', 'tables']
    )
    return HTMLResponse(content=PAGE.format(body=html_content))
