"""PAHS configuration, parameters and the recurrent cell"""
