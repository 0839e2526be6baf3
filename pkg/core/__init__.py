# chartkit core package