"""Walk through prompt parsing: tokens, object groups, outside set.

Run: python demos/01_prompt_structure.py
"""

from attnprior import parse, tokenize, validate

prompt = "a baby monkey and a wooden curved crown and an orange guitar"
print(f"prompt: {prompt!r}\n")

print("tokens:")
for tok in tokenize(prompt):
    print(f"  {tok.index:2d}  {tok.text}")

parsed = parse(prompt)
print("\nobject groups (noun indices <- modifier indices):")
for k, group in enumerate(parsed.groups):
    nouns = [parsed.tokens[i].text for i in sorted(group.noun_indices)]
    mods = [parsed.tokens[i].text for i in sorted(group.modifier_indices)]
    print(f"  group {k}: {nouns} <- {mods}")
    print(f"    modifier-noun pairs: {sorted(group.pairs)}")

print("\noutside tokens:",
      [parsed.tokens[i].text for i in sorted(parsed.outside)])
print("invariant violations:", validate(parsed) or "none")

print("\nserialized form:")
print(parsed.to_json())
