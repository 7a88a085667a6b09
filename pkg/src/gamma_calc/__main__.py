from src.gamma_calc.cli import main

main()
