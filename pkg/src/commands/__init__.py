# REDDA Toolkit Command Modules Package
