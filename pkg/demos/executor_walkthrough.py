"""Execute a few programs and adjudicate a beam against answer choices."""

from geosolve.executor import adjudicate, execute, parse_program

table = {"N_0": 50.0, "N_1": 60.0}
program = "g_minus C_180 N_0 g_minus V_0 N_1"
print("program:", program)
print("steps:", [(s.op, s.args) for s in parse_program(program.split()).steps])
result = execute(program, table)
print("trace:", result.trace, "value:", result.value)

# the first beam does not parse, the second divides by zero, the third lands on a choice
beams = [["g_minus", "N_0"], ["g_divide", "N_0", "C_0"], program.split()]
verdict = adjudicate(beams, table, [60.0, 70.0, 80.0, 90.0])
print("answer index:", verdict.index, "from beam", verdict.beam_rank, "steps", verdict.steps_used)
print("no result:", adjudicate(beams[:2], table, [60.0, 70.0, 80.0, 90.0]).no_result)
