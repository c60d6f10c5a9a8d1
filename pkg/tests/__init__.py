"""toolsift test package"""
