# Test helpers package