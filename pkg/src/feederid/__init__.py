"""Library-aided impedance range identification for radial LV feeders."""
