# Makes src a package for reliable imports

