# chartkit plotting package