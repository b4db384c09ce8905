# resources


