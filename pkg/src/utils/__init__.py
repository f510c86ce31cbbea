# REDDA Toolkit Estimators and Utilities Package
