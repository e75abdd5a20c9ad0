"""
Reading a location-year-category table
======================================

Writes a small long-format CSV with a couple of gaps, reads it back into a
count tensor with mean imputation, and attaches a population table.
"""

import os
import tempfile

from poisson_hotspots.io import ingest_counts, ingest_population

folder = tempfile.mkdtemp()
counts_csv = os.path.join(folder, "counts.csv")
pop_csv = os.path.join(folder, "population.csv")

with open(counts_csv, "w") as fh:
    fh.write("location,year,hepatitis,measles\n")
    fh.write("Ohio,1993,40,3\nOhio,1994,NA,5\nOhio,1995,44,\n")
    fh.write("Iowa,1993,12,0\nIowa,1994,10,1\nIowa,1995,14,2\n")

with open(pop_csv, "w") as fh:
    fh.write("location,year,population\n")
    for loc, size in (("Ohio", 1115.0), ("Iowa", 286.0)):
        for year in (1993, 1994, 1995):
            fh.write(f"{loc},{year},{size}\n")

data = ingest_counts(counts_csv)
print("dims:", data.dims)
print("locations:", data.locations, " categories:", data.categories, " years:", data.years)
for loc, cat, year, value in data.imputed:
    print(f"filled {loc}/{cat}/{year} with {value:g}")
print(data.counts[0])

# population in 10,000s, converted to persons
pop = ingest_population(pop_csv, data.locations, data.years, len(data.categories), units=10_000)
print("population tensor:", pop.shape, pop[0, 0])
