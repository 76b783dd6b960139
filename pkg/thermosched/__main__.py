from thermosched.cli import app

app(prog_name="python -m thermosched")
