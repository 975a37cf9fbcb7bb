from stsbp.cli import main_entry

main_entry()
